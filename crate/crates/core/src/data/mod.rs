//! Dataset ingestion, synthetic data, run configuration and the pipeline
//! glue shared by the command-line tool and the tests.

pub mod config;
pub mod ingest;
pub mod synthetic;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{ConfigError, FlatConfig, RunConfig, CONFIG_KEYS};
pub use ingest::{
    ingest, k_core, parse_interactions, parse_roles, parse_triples, read_reviews, sha256_file,
    Dataset, DatasetManifest, IngestOptions,
};
pub use synthetic::{generate_synthetic, genre_name, SyntheticData, SyntheticSpec};

use crate::encoder::{encode_profiles, EncodeError, ProfileEmbeddingMatrix};
use crate::graph::{split_interactions, GraphError, InteractionSplit, KnowledgeGraph};
use crate::model::Profiles;
use crate::profiler::{
    generate_all_profiles, CompletionClient, ProfileError, ProfileStore, ProfilingOptions,
    ProfilingOutcome, Review, TemplateSet,
};

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("{}:{line}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("checksum mismatch for {}: expected {expected}, found {actual}", file.display())]
    ChecksumMismatch {
        file: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("invalid synthetic spec: {0}")]
    SpecInvalid(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

impl DataError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        DataError::Io(format!("{}: {e}", path.display()))
    }
}

/// Profiles for every entity of `train_graph` and their embedding matrix.
pub struct ProfiledGraph {
    pub outcome: ProfilingOutcome,
    pub embedding: ProfileEmbeddingMatrix,
}

impl ProfiledGraph {
    pub fn store(&self) -> &ProfileStore {
        &self.outcome.store
    }

    pub fn profiles(&self) -> Profiles {
        Profiles::new(self.embedding.to_array())
    }
}

/// Generates profiles from the training graph only (reviews of held-out
/// interactions are ignored) and encodes them.
pub fn profile_and_encode(
    train_graph: &KnowledgeGraph,
    templates: &TemplateSet,
    reviews: &[Review],
    cfg: &RunConfig,
    client: Option<&dyn CompletionClient>,
    checkpoint: Option<PathBuf>,
) -> Result<ProfiledGraph, DataError> {
    let options = ProfilingOptions {
        mode: cfg.profile_mode,
        limits: cfg.limits,
        seed: cfg.seed,
        checkpoint,
        max_failure_rate: cfg.max_failure_rate,
    };
    let outcome = generate_all_profiles(train_graph, templates, reviews, &options, client)?;
    let embedding = encode_profiles(&outcome.store, &cfg.encoder)?;
    Ok(ProfiledGraph { outcome, embedding })
}

/// A split dataset with profiles built from its training interactions.
pub struct Experiment {
    pub graph: KnowledgeGraph,
    pub split: InteractionSplit,
    pub train_graph: KnowledgeGraph,
    pub profiled: ProfiledGraph,
}

impl Experiment {
    pub fn prepare(
        dataset: &Dataset,
        cfg: &RunConfig,
        client: Option<&dyn CompletionClient>,
    ) -> Result<Self, DataError> {
        let split = split_interactions(&dataset.graph, cfg.split, cfg.seed)?;
        let train_graph = dataset.graph.with_interactions(&split.train);
        let profiled = profile_and_encode(
            &train_graph,
            &dataset.templates,
            &dataset.reviews,
            cfg,
            client,
            None,
        )?;
        Ok(Self {
            graph: dataset.graph.clone(),
            split,
            train_graph,
            profiled,
        })
    }

    pub fn profiles(&self) -> Profiles {
        self.profiled.profiles()
    }
}

/// In-memory dataset from synthetic data with the built-in templates.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    let data = generate_synthetic(spec)?;
    Ok(Dataset {
        name: "synthetic".into(),
        graph: data.graph()?,
        reviews: data.reviews,
        templates: TemplateSet::default(),
    })
}
