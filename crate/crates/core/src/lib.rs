//! Profile-enriched knowledge-graph recommendation.
//!
//! The pipeline runs bottom-up: a [`graph::KnowledgeGraph`] is split per
//! user, every entity gets a text profile ([`profiler`]), profiles are
//! embedded ([`encoder`]), injected into relation-aware graph propagation
//! ([`model`]), trained with BPR plus a pairwise profile matching loss
//! ([`trainer`]), and ranked against held-out interactions ([`eval`]).

pub mod data;
pub mod encoder;
pub mod eval;
pub mod graph;
pub mod model;
pub mod profiler;
pub mod seed;
pub mod trainer;

pub use encoder::{DenseMatrix, EncoderSpec, ProfileEmbeddingMatrix};
pub use eval::{MetricReport, RankedList};
pub use graph::{
    EntityId, GraphBuilder, InteractionSplit, KnowledgeGraph, RelationId, Role, SplitRatios, Triple,
};
pub use model::{FusionMode, ModelConfig, ModelParams, Profiles, PropagationOutput};
pub use profiler::{Profile, ProfileStore, Review, TemplateSet};
pub use trainer::{TrainConfig, TrainOutcome};
