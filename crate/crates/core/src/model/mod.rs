//! Profile-injected knowledge-graph propagation model.

mod checkpoint;
mod grad;
mod params;
mod propagate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry};
pub use grad::{backward, Gradients};
pub use params::{ModelParams, TensorShape};
pub use propagate::{
    aggregate_layer, attention_scores, inject, project_profile, project_profiles, propagate,
    propagate_with, score, score_all_items, strip_profile, Injection, Profiles, Projection,
    PropagationOutput,
};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("divisor 1 + lambda*q is near zero at entity {entity}, dimension {dim}")]
    NearZeroDivisor { entity: usize, dim: usize },
    #[error("expected a {expected} entity, {label} is a {found}")]
    RoleMismatch {
        label: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("unknown fusion mode `{0}`")]
    UnknownFusion(String),
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    #[default]
    AddWithInverse,
    AddWithoutInverse,
    MulWithInverse,
    MulWithoutInverse,
    Concatenate,
    AttentionFusion,
}

impl FusionMode {
    pub const ALL: [FusionMode; 6] = [
        FusionMode::AddWithInverse,
        FusionMode::AddWithoutInverse,
        FusionMode::MulWithInverse,
        FusionMode::MulWithoutInverse,
        FusionMode::Concatenate,
        FusionMode::AttentionFusion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::AddWithInverse => "add-with-inverse",
            FusionMode::AddWithoutInverse => "add-without-inverse",
            FusionMode::MulWithInverse => "mul-with-inverse",
            FusionMode::MulWithoutInverse => "mul-without-inverse",
            FusionMode::Concatenate => "concatenate",
            FusionMode::AttentionFusion => "attention-fusion",
        }
    }

    /// Whether the final representation has the profile contribution removed.
    pub fn has_inverse(self) -> bool {
        matches!(
            self,
            FusionMode::AddWithInverse | FusionMode::MulWithInverse
        )
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ModelError::UnknownFusion(s.to_owned()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding dimension `d`.
    pub dim: usize,
    /// Profile embedding dimension `d_s`.
    pub profile_dim: usize,
    /// Projection hidden width, `ceil((d_s + d) / 2)` by default.
    pub hidden_dim: usize,
    pub layers: usize,
    /// Injection strength.
    pub lambda_p: f64,
    pub fusion: FusionMode,
    /// Reuse the first layer's attention weights in every layer.
    pub frozen_attention: bool,
    pub leaky_slope: f64,
    /// Smallest divisor magnitude accepted by the multiplicative inverse.
    pub divisor_eps: f64,
}

impl ModelConfig {
    pub fn new(dim: usize, profile_dim: usize) -> Self {
        Self {
            dim,
            profile_dim,
            hidden_dim: (profile_dim + dim).div_ceil(2),
            layers: 2,
            lambda_p: 0.25,
            fusion: FusionMode::AddWithInverse,
            frozen_attention: false,
            leaky_slope: 0.01,
            divisor_eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim == 0 || self.profile_dim == 0 || self.hidden_dim == 0 {
            return Err(ModelError::ShapeMismatch(
                "dimensions must be positive".into(),
            ));
        }
        if !self.lambda_p.is_finite() || !self.leaky_slope.is_finite() {
            return Err(ModelError::NonFinite("model config".into()));
        }
        Ok(())
    }
}
