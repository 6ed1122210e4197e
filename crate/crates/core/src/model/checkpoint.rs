//! Checkpoints: one `SPKE` file per tensor plus `manifest.json`.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelError, ModelParams};
use crate::encoder::matrix_io::{read_matrix, write_matrix, DenseMatrix};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub seed: u64,
    pub config: ModelConfig,
    /// SHA-256 of the JSON-serialized config.
    pub config_hash: String,
    pub epoch: Option<usize>,
    pub tensors: Vec<TensorEntry>,
}

pub fn config_hash(cfg: &ModelConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn err(e: impl std::fmt::Display) -> ModelError {
    ModelError::Checkpoint(e.to_string())
}

/// Writes `params` to directory `dir`, creating it if needed. Values are
/// stored as `f32`.
pub fn save_checkpoint(
    dir: &Path,
    params: &ModelParams,
    cfg: &ModelConfig,
    seed: u64,
    epoch: Option<usize>,
) -> Result<CheckpointManifest, ModelError> {
    fs::create_dir_all(dir).map_err(|e| err(format!("{}: {e}", dir.display())))?;
    let mut tensors = Vec::new();
    for (name, t) in params.tensors() {
        let file = format!("{name}.spke");
        let data = t.iter().map(|&v| v as f32).collect();
        write_matrix(
            &dir.join(&file),
            &DenseMatrix::new(t.nrows(), t.ncols(), data),
        )
        .map_err(err)?;
        tensors.push(TensorEntry {
            name: name.to_owned(),
            file,
            rows: t.nrows(),
            cols: t.ncols(),
        });
    }
    let manifest = CheckpointManifest {
        format_version: 1,
        seed,
        config: cfg.clone(),
        config_hash: config_hash(cfg),
        epoch,
        tensors,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(err)?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n").map_err(err)?;
    Ok(manifest)
}

/// Reads a checkpoint written by [`save_checkpoint`], verifying the config
/// hash and every tensor shape.
pub fn load_checkpoint(dir: &Path) -> Result<(ModelParams, CheckpointManifest), ModelError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(err)?;
    if manifest.config_hash != config_hash(&manifest.config) {
        return Err(err("config hash does not match the stored config"));
    }
    let load = |name: &str| -> Result<Option<Array2<f64>>, ModelError> {
        let Some(entry) = manifest.tensors.iter().find(|t| t.name == name) else {
            return Ok(None);
        };
        let m = read_matrix(&dir.join(&entry.file)).map_err(err)?;
        if (m.rows, m.cols) != (entry.rows, entry.cols) {
            return Err(err(format!(
                "{name}: file is {}x{}, manifest says {}x{}",
                m.rows, m.cols, entry.rows, entry.cols
            )));
        }
        let data = m.data.iter().map(|&v| f64::from(v)).collect();
        Ok(Some(
            Array2::from_shape_vec((m.rows, m.cols), data).map_err(err)?,
        ))
    };
    let need = |name: &str| load(name)?.ok_or_else(|| err(format!("missing tensor {name}")));
    let params = ModelParams {
        entity: need("entity")?,
        relation: need("relation")?,
        w_head: need("w_head")?,
        w_tail: need("w_tail")?,
        proj_hidden: need("proj_hidden")?,
        proj_hidden_bias: need("proj_hidden_bias")?,
        proj_out: need("proj_out")?,
        proj_out_bias: need("proj_out_bias")?,
        fusion: load("fusion")?,
    };
    params
        .check_shapes(
            &manifest.config,
            params.entity.nrows(),
            params.relation.nrows(),
        )
        .map_err(ModelError::Checkpoint)?;
    Ok((params, manifest))
}
