use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use pkgrec_core::data::{
    generate_synthetic, ingest, profile_and_encode, ConfigError, DataError, Dataset, FlatConfig,
    IngestOptions, RunConfig, SyntheticSpec,
};
use pkgrec_core::encoder::{encode_profiles, EncodeError, ProfileEmbeddingMatrix};
use pkgrec_core::eval::ablation::{
    ablation_table, interaction_sweep, run_ablation, AblationVariant, SWEEP_RATIOS,
};
use pkgrec_core::eval::{evaluate, EvalError, EvalOptions};
use pkgrec_core::graph::{split_interactions, GraphError, InteractionSplit, KnowledgeGraph};
use pkgrec_core::model::{load_checkpoint, propagate, save_checkpoint, ModelError, Profiles};
use pkgrec_core::profiler::{
    generate_all_profiles, CompletionClient, HttpCompletionClient, LlmError, ProfileError,
    ProfileMode, ProfileStore, ProfilingOptions,
};
use pkgrec_core::trainer::{fit_with_progress, TrainError};

use crate::{Command, Common};

const PROFILES_FILE: &str = "profiles.jsonl";
const PROFILES_PARTIAL_FILE: &str = "profiles.partial.jsonl";
const EMBEDDING_FILE: &str = "profiles.spke";
const LOG_FILE: &str = "train_log.jsonl";
const CHECKPOINT_DIR: &str = "checkpoint";
const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Data(m) | CliError::Runtime(m) => {
                f.write_str(m)
            }
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ProfileError> for CliError {
    fn from(e: ProfileError) -> Self {
        match e {
            ProfileError::ConfigMissing | ProfileError::Templates(_) => {
                CliError::Config(e.to_string())
            }
            ProfileError::Io(_) | ProfileError::Store(_) | ProfileError::Graph(_) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EncodeError> for CliError {
    fn from(e: EncodeError) -> Self {
        match e {
            EncodeError::Io(_)
            | EncodeError::DimensionMismatch { .. }
            | EncodeError::MissingProfile(_) => CliError::Data(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Profile(p) => p.into(),
            DataError::Encode(x) => x.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) => CliError::Config(e.to_string()),
            TrainError::EmptySplit(_) | TrainError::NoNegativeAvailable(_) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Checkpoint(_) | ModelError::ShapeMismatch(_) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::MissingApiKey(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn resolve(common: &Common, extra: &[(&str, String)]) -> Result<RunConfig, CliError> {
    let mut flags = FlatConfig::default();
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
        flags.set(k.trim(), v.trim());
    }
    if let Some(d) = &common.dataset {
        flags.set("dataset", d.as_str());
    }
    if let Some(w) = &common.work_dir {
        flags.set("work_dir", w.as_str());
    }
    if let Some(s) = common.seed {
        flags.set("seed", s.to_string());
    }
    for (k, v) in extra {
        flags.set(*k, v.as_str());
    }
    Ok(RunConfig::resolve(common.config.as_deref(), &flags)?)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let path = cfg.dataset.as_ref().ok_or_else(|| {
        CliError::Config("no dataset given (set `dataset` or pass --dataset)".into())
    })?;
    Ok(ingest(path, &IngestOptions { k_core: cfg.k_core })?)
}

fn split(ds: &Dataset, cfg: &RunConfig) -> Result<(InteractionSplit, KnowledgeGraph), CliError> {
    let split = split_interactions(&ds.graph, cfg.split, cfg.seed)?;
    let train_graph = ds.graph.with_interactions(&split.train);
    Ok((split, train_graph))
}

fn work_path(cfg: &RunConfig, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.work_dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", cfg.work_dir.display())))?;
    Ok(cfg.work_dir.join(name))
}

fn require(path: &Path, hint: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "missing {} (run `pkgrec {hint}` first)",
            path.display()
        )))
    }
}

fn client(cfg: &RunConfig) -> Result<Option<HttpCompletionClient>, CliError> {
    match cfg.profile_mode {
        ProfileMode::Template => Ok(None),
        ProfileMode::Llm => Ok(Some(HttpCompletionClient::new(cfg.llm.clone())?)),
    }
}

fn write(path: &Path, body: &str) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_profiles(cfg: &RunConfig, g: &KnowledgeGraph) -> Result<Profiles, CliError> {
    let path = cfg.work_dir.join(EMBEDDING_FILE);
    require(&path, "embed")?;
    let m = ProfileEmbeddingMatrix::load(&path, g.entity_labels())?;
    Ok(Profiles::new(m.to_array()))
}

pub fn run(common: &Common, command: &Command) -> Result<(), CliError> {
    match command {
        Command::Ingest { k_core } => {
            let extra: Vec<(&str, String)> =
                k_core.iter().map(|k| ("k_core", k.to_string())).collect();
            let cfg = resolve(common, &extra)?;
            let ds = load_dataset(&cfg)?;
            println!("dataset: {}", ds.name);
            println!("{}", ds.graph.stats());
            println!("reviews: {}", ds.reviews.len());
        }
        Command::Synth {
            out,
            users,
            items,
            genres,
            per_user,
            in_genre,
        } => {
            let cfg = resolve(common, &[])?;
            let spec = SyntheticSpec {
                n_users: *users,
                n_items: *items,
                n_genres: *genres,
                interactions_per_user: *per_user,
                in_genre_probability: *in_genre,
                seed: cfg.seed,
            };
            let data = generate_synthetic(&spec)?;
            let manifest = data.write(out, "synthetic")?;
            println!(
                "wrote {} ({} interactions, in-genre fraction {:.4})",
                manifest.display(),
                data.interactions.len(),
                data.in_genre_fraction()
            );
        }
        Command::Profile { mode } => {
            let extra: Vec<(&str, String)> =
                mode.iter().map(|m| ("profile_mode", m.clone())).collect();
            let cfg = resolve(common, &extra)?;
            let ds = load_dataset(&cfg)?;
            let (_, train_graph) = split(&ds, &cfg)?;
            let client = client(&cfg)?;
            let options = ProfilingOptions {
                mode: cfg.profile_mode,
                limits: cfg.limits,
                seed: cfg.seed,
                checkpoint: match cfg.profile_mode {
                    ProfileMode::Llm => Some(work_path(&cfg, PROFILES_PARTIAL_FILE)?),
                    ProfileMode::Template => None,
                },
                max_failure_rate: cfg.max_failure_rate,
            };
            let outcome = generate_all_profiles(
                &train_graph,
                &ds.templates,
                &ds.reviews,
                &options,
                client.as_ref().map(|c| c as &dyn CompletionClient),
            )?;
            let path = work_path(&cfg, PROFILES_FILE)?;
            outcome.store.save(&train_graph, &path)?;
            println!(
                "wrote {} profiles to {} ({} llm requests, {} fell back to templates)",
                outcome.store.len(),
                path.display(),
                outcome.network_calls,
                outcome.failures.len()
            );
        }
        Command::Embed => {
            let cfg = resolve(common, &[])?;
            let ds = load_dataset(&cfg)?;
            let (_, train_graph) = split(&ds, &cfg)?;
            let path = cfg.work_dir.join(PROFILES_FILE);
            require(&path, "profile")?;
            let store = ProfileStore::load(&train_graph, &path)?;
            let m = encode_profiles(&store, &cfg.encoder)?;
            let out = work_path(&cfg, EMBEDDING_FILE)?;
            m.save(&out, train_graph.entity_labels())?;
            println!(
                "wrote {}x{} profile matrix to {} ({})",
                m.rows(),
                m.dim(),
                out.display(),
                m.encoder_tag
            );
        }
        Command::Train => {
            let cfg = resolve(common, &[])?;
            let ds = load_dataset(&cfg)?;
            let (split, train_graph) = split(&ds, &cfg)?;
            let profiles = load_profiles(&cfg, &train_graph)?;
            let outcome = fit_with_progress(&ds.graph, &split, &profiles, &cfg.train, |r| {
                info!(
                    "epoch {} rec {:.6} pair {:.6} val recall@{} {:.4}",
                    r.epoch, r.loss_rec, r.loss_pair, r.k, r.val_recall
                );
            })?;
            let log_path = work_path(&cfg, LOG_FILE)?;
            outcome.write_log(&log_path)?;
            let ckpt = work_path(&cfg, CHECKPOINT_DIR)?;
            save_checkpoint(
                &ckpt,
                &outcome.params,
                &outcome.model_config,
                cfg.seed,
                Some(outcome.best_epoch),
            )?;
            println!(
                "trained {} epochs; best epoch {} with validation recall@{} {:.4}; log {}; checkpoint {}",
                outcome.epochs_run,
                outcome.best_epoch,
                cfg.train.eval_k,
                outcome.best_metric,
                log_path.display(),
                ckpt.display()
            );
        }
        Command::Eval => {
            let cfg = resolve(common, &[])?;
            let ds = load_dataset(&cfg)?;
            let (split, train_graph) = split(&ds, &cfg)?;
            let profiles = load_profiles(&cfg, &train_graph)?;
            let ckpt = cfg.work_dir.join(CHECKPOINT_DIR);
            require(&ckpt, "train")?;
            let (params, manifest) = load_checkpoint(&ckpt)?;
            let out = propagate(&params, &manifest.config, &profiles, &train_graph)?;
            let opts = EvalOptions {
                mask_validation: cfg.mask_validation,
                ..EvalOptions::default()
            };
            let mut report = evaluate(&out.z, &train_graph, &split, &opts)?;
            report.config_hash = Some(manifest.config_hash.clone());
            write(&work_path(&cfg, METRICS_FILE)?, &report.to_jsonl())?;
            println!("{report}");
        }
        Command::Ablate {
            fusion,
            drop,
            variants,
        } => {
            let cfg = resolve(common, &[])?;
            let mut list = Vec::new();
            for v in variants.iter().chain(drop.iter()) {
                list.push(v.parse::<AblationVariant>().map_err(CliError::Usage)?);
            }
            if *fusion {
                list.extend(AblationVariant::fusion_variants());
            }
            if list.is_empty() {
                list = AblationVariant::PROFILE_VARIANTS.to_vec();
            } else if !drop.is_empty() && !list.contains(&AblationVariant::Full) {
                list.insert(0, AblationVariant::Full);
            }
            let ds = load_dataset(&cfg)?;
            let (split, train_graph) = split(&ds, &cfg)?;
            let profiles = load_profiles(&cfg, &train_graph)?;
            let opts = EvalOptions {
                mask_validation: cfg.mask_validation,
                ..EvalOptions::default()
            };
            let results = run_ablation(&list, &ds.graph, &split, &profiles, &cfg.train, &opts)?;
            let body: String = results
                .iter()
                .map(|r| serde_json::to_string(r).expect("result serializes") + "\n")
                .collect();
            write(&work_path(&cfg, "ablation.jsonl")?, &body)?;
            print!("{}", ablation_table(&results));
        }
        Command::Sweep { ratios } => {
            let cfg = resolve(common, &[])?;
            let ratios = if ratios.is_empty() {
                SWEEP_RATIOS.to_vec()
            } else {
                ratios.clone()
            };
            let ds = load_dataset(&cfg)?;
            let (split, _) = split(&ds, &cfg)?;
            let client = client(&cfg)?;
            let opts = EvalOptions {
                mask_validation: cfg.mask_validation,
                ..EvalOptions::default()
            };
            let points = interaction_sweep(&ds.graph, &split, &cfg.train, &ratios, &opts, |sub| {
                let g = ds.graph.with_interactions(&sub.train);
                let client = client.as_ref().map(|c| c as &dyn CompletionClient);
                profile_and_encode(&g, &ds.templates, &ds.reviews, &cfg, client, None)
                    .map(|p| p.profiles())
                    .map_err(|e| TrainError::InvalidConfig(format!("profiling failed: {e}")))
            })?;
            let mut body = String::new();
            println!(
                "{:>6}  {:>8}  {:>9}  {:>9}",
                "ratio", "train", "R@20", "N@20"
            );
            for p in &points {
                body.push_str(&(serde_json::to_string(p).expect("point serializes") + "\n"));
                println!(
                    "{:>6.2}  {:>8}  {:>9.4}  {:>9.4}",
                    p.ratio,
                    p.train_interactions,
                    p.test.recall(20).unwrap_or(f64::NAN),
                    p.test.ndcg(20).unwrap_or(f64::NAN)
                );
            }
            write(&work_path(&cfg, "sweep.jsonl")?, &body)?;
        }
    }
    Ok(())
}
