//! Profile text encoders.
//!
//! Any [`TextEncoder`] can produce the profile embedding matrix. The bundled
//! encoder is a seeded hashed bag of words: lowercase alphanumeric tokens are
//! hashed into `dim` buckets, counted, and the count vector is ℓ2-normalized.
//! Precomputed embeddings from an external model are loaded from `SPKE`
//! files instead.

pub mod matrix_io;

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

pub use matrix_io::{DenseMatrix, MatrixIoError};

use crate::graph::EntityId;
use crate::profiler::ProfileStore;
use crate::seed::{fnv1a, mix64};

#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("non-finite value in row {0}")]
    NonFiniteValue(usize),
    #[error("entity {0} has no profile")]
    MissingProfile(EntityId),
    #[error("embedding dimension must be positive")]
    ZeroDimension,
    #[error(transparent)]
    Io(#[from] MatrixIoError),
}

pub trait TextEncoder: Sync {
    fn dim(&self) -> usize;

    /// Identifies the encoder and its settings.
    fn tag(&self) -> String;

    fn encode(&self, text: &str) -> Vec<f32>;
}

/// Lowercased maximal runs of alphanumeric characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashedBagOfWords {
    dim: usize,
    seed: u64,
}

impl HashedBagOfWords {
    pub fn new(dim: usize, seed: u64) -> Result<Self, EncodeError> {
        if dim == 0 {
            return Err(EncodeError::ZeroDimension);
        }
        Ok(Self { dim, seed })
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(0xcbf2_9ce4_8422_2325 ^ mix64(self.seed), token.as_bytes()) % self.dim as u64)
            as usize
    }
}

impl TextEncoder for HashedBagOfWords {
    fn dim(&self) -> usize {
        self.dim
    }

    fn tag(&self) -> String {
        format!("hashed-bow:dim={}:seed={}", self.dim, self.seed)
    }

    /// Raw token counts; normalization happens on the whole matrix.
    fn encode(&self, text: &str) -> Vec<f32> {
        let mut counts = vec![0f32; self.dim];
        for tok in tokenize(text) {
            counts[self.bucket(&tok)] += 1.0;
        }
        counts
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    HashedBagOfWords {
        seed: u64,
    },
    /// Precomputed rows in entity-id order.
    ExternalFile {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub dim: usize,
    /// ℓ2-normalize rows after encoding or loading.
    pub normalize: bool,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            kind: EncoderKind::HashedBagOfWords { seed: 0 },
            dim: 1024,
            normalize: true,
        }
    }
}

/// `N x d_s` profile vectors aligned to entity ids.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileEmbeddingMatrix {
    pub matrix: DenseMatrix,
    pub encoder_tag: String,
}

impl ProfileEmbeddingMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.rows
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols
    }

    pub fn row(&self, e: EntityId) -> &[f32] {
        self.matrix.row(e.index())
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.matrix.rows, self.matrix.cols), |(i, j)| {
            f64::from(self.matrix.data[i * self.matrix.cols + j])
        })
    }

    /// Writes the matrix and a companion `<path>.labels` index.
    pub fn save(&self, path: &Path, labels: &[String]) -> Result<(), EncodeError> {
        matrix_io::write_matrix(path, &self.matrix)?;
        matrix_io::write_index(&index_path(path), labels)?;
        Ok(())
    }

    /// Loads a matrix; when a companion index exists its labels must match
    /// `labels` row for row.
    pub fn load(path: &Path, labels: &[String]) -> Result<Self, EncodeError> {
        let matrix = matrix_io::read_matrix(path)?;
        if matrix.rows != labels.len() {
            return Err(EncodeError::DimensionMismatch {
                expected: format!("{} rows", labels.len()),
                found: format!("{} rows", matrix.rows),
            });
        }
        let idx = index_path(path);
        if idx.exists() {
            let stored = matrix_io::read_index(&idx)?;
            if stored != labels {
                return Err(EncodeError::DimensionMismatch {
                    expected: "entity labels in id order".into(),
                    found: format!("index {}", idx.display()),
                });
            }
        }
        Ok(Self {
            matrix,
            encoder_tag: format!("file:{}", path.display()),
        })
    }
}

pub fn index_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".labels");
    PathBuf::from(s)
}

/// Scales every row to unit ℓ2 norm. All-zero rows become `e_0`.
pub fn normalize_rows(m: &mut DenseMatrix) -> Result<(), EncodeError> {
    for i in 0..m.rows {
        let row = m.row_mut(i);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(EncodeError::NonFiniteValue(i));
        }
        let norm = row
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            row[0] = 1.0;
        } else {
            for v in row.iter_mut() {
                *v = (f64::from(*v) / norm) as f32;
            }
        }
    }
    Ok(())
}

pub fn encode_texts(
    texts: &[&str],
    encoder: &dyn TextEncoder,
    normalize: bool,
) -> Result<ProfileEmbeddingMatrix, EncodeError> {
    let dim = encoder.dim();
    let rows: Vec<Vec<f32>> = texts.par_iter().map(|t| encoder.encode(t)).collect();
    let mut matrix = DenseMatrix::zeros(texts.len(), dim);
    for (i, r) in rows.into_iter().enumerate() {
        if r.len() != dim {
            return Err(EncodeError::DimensionMismatch {
                expected: format!("{dim} columns"),
                found: format!("{} columns", r.len()),
            });
        }
        matrix.row_mut(i).copy_from_slice(&r);
    }
    if normalize {
        normalize_rows(&mut matrix)?;
    } else if let Some(i) = (0..matrix.rows).find(|&i| matrix.row(i).iter().any(|v| !v.is_finite()))
    {
        return Err(EncodeError::NonFiniteValue(i));
    }
    Ok(ProfileEmbeddingMatrix {
        matrix,
        encoder_tag: encoder.tag(),
    })
}

/// Embeds every profile in `store`, one row per entity in id order.
pub fn encode_profiles(
    store: &ProfileStore,
    spec: &EncoderSpec,
) -> Result<ProfileEmbeddingMatrix, EncodeError> {
    if spec.dim == 0 {
        return Err(EncodeError::ZeroDimension);
    }
    let texts = store.texts();
    if let Some(i) = texts.iter().position(Option::is_none) {
        return Err(EncodeError::MissingProfile(EntityId(i as u32)));
    }
    match &spec.kind {
        EncoderKind::HashedBagOfWords { seed } => {
            let texts: Vec<&str> = texts.into_iter().map(Option::unwrap).collect();
            encode_texts(
                &texts,
                &HashedBagOfWords::new(spec.dim, *seed)?,
                spec.normalize,
            )
        }
        EncoderKind::ExternalFile { path } => {
            let mut matrix = matrix_io::read_matrix(path)?;
            if matrix.rows != texts.len() || matrix.cols != spec.dim {
                return Err(EncodeError::DimensionMismatch {
                    expected: format!("{}x{}", texts.len(), spec.dim),
                    found: format!("{}x{}", matrix.rows, matrix.cols),
                });
            }
            if spec.normalize {
                normalize_rows(&mut matrix)?;
            } else if let Some(i) =
                (0..matrix.rows).find(|&i| matrix.row(i).iter().any(|v| !v.is_finite()))
            {
                return Err(EncodeError::NonFiniteValue(i));
            }
            Ok(ProfileEmbeddingMatrix {
                matrix,
                encoder_tag: format!("file:{}", path.display()),
            })
        }
    }
}
