//! BPR training with the pairwise profile matching loss.

mod loss;
mod optim;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use loss::{
    bpr_loss, bpr_loss_grad, matching_loss_grad, pairwise_matching_loss, sample_rounds, sigmoid,
    softplus, subset_size,
};
pub use optim::{Adam, AdamConfig};

use crate::eval::{evaluate_validation, EvalError};
use crate::graph::{EntityId, InteractionSplit, KnowledgeGraph};
use crate::model::{
    backward, propagate, propagate_with, FusionMode, ModelConfig, ModelError, ModelParams, Profiles,
};
use crate::seed::stage_rng;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("user {0} has interacted with every item; no negative available")]
    NoNegativeAvailable(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("row {0} has zero norm")]
    DegenerateRow(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub lambda_p: f64,
    pub lambda_pair: f64,
    /// Fraction of entities drawn per matching round.
    pub pair_fraction: f64,
    pub pair_rounds: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a strict validation improvement before stopping.
    pub patience: usize,
    pub weight_decay: f64,
    pub fusion: FusionMode,
    pub frozen_attention: bool,
    pub seed: u64,
    /// Cutoff of the validation metric used for early stopping.
    pub eval_k: usize,
    /// Record elapsed seconds in the training log. Off by default so logs
    /// are byte-reproducible.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            lambda_p: 0.25,
            lambda_pair: 0.01,
            pair_fraction: 0.1,
            pair_rounds: 3,
            learning_rate: 1e-3,
            batch_size: 1024,
            max_epochs: 500,
            patience: 10,
            weight_decay: 0.0,
            fusion: FusionMode::AddWithInverse,
            frozen_attention: false,
            seed: 0,
            eval_k: 20,
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_owned()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if !(self.pair_fraction > 0.0 && self.pair_fraction <= 1.0) {
            return bad("pair_fraction must be in (0, 1]");
        }
        if self.pair_rounds == 0 {
            return bad("pair_rounds must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.eval_k == 0 {
            return bad("batch_size, max_epochs and eval_k must be positive");
        }
        if !(self.lambda_p >= 0.0) || !(self.lambda_pair >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lambda_p, lambda_pair and weight_decay must be non-negative");
        }
        Ok(())
    }

    pub fn model_config(&self, profile_dim: usize) -> ModelConfig {
        let mut m = ModelConfig::new(self.dim, profile_dim);
        m.layers = self.layers;
        m.lambda_p = self.lambda_p;
        m.fusion = self.fusion;
        m.frozen_attention = self.frozen_attention;
        m
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub user: EntityId,
    pub pos: EntityId,
    pub neg: EntityId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Batch {
    pub triplets: Vec<Triplet>,
}

/// Draws one negative item per positive pair, uniformly among items the user
/// never interacted with.
pub struct NegativeSampler {
    items: Vec<EntityId>,
    interacted: Vec<BTreeSet<EntityId>>,
}

impl NegativeSampler {
    /// `g` must hold every known interaction so that held-out positives are
    /// never drawn as negatives.
    pub fn new(g: &KnowledgeGraph) -> Self {
        Self {
            items: g.items().to_vec(),
            interacted: g.interacted_items(),
        }
    }

    pub fn sample(
        &self,
        pairs: &[(EntityId, EntityId)],
        g: &KnowledgeGraph,
        rng: &mut impl Rng,
    ) -> Result<Batch, TrainError> {
        let mut triplets = Vec::with_capacity(pairs.len());
        for &(u, v) in pairs {
            let seen = &self.interacted[u.index()];
            if seen.len() >= self.items.len() {
                return Err(TrainError::NoNegativeAvailable(
                    g.entity_label(u).to_owned(),
                ));
            }
            let neg = loop {
                let c = self.items[rng.random_range(0..self.items.len())];
                if !seen.contains(&c) {
                    break c;
                }
            };
            triplets.push(Triplet {
                user: u,
                pos: v,
                neg,
            });
        }
        Ok(Batch { triplets })
    }
}

/// Seeded negative sampling for `pairs` against the interactions of `g`.
pub fn sample_negatives(
    pairs: &[(EntityId, EntityId)],
    g: &KnowledgeGraph,
    seed: u64,
) -> Result<Batch, TrainError> {
    NegativeSampler::new(g).sample(pairs, g, &mut stage_rng(seed, "negatives", 0))
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub pair: f64,
    pub total: f64,
}

/// Loss and gradients for one batch without updating anything.
#[allow(clippy::too_many_arguments)]
pub fn batch_gradients(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &Batch,
    profiles: &Profiles,
    g: &KnowledgeGraph,
    lambda_pair: f64,
    pair_rounds: &[Vec<usize>],
) -> Result<(LossBreakdown, ModelParams), TrainError> {
    let use_pair = lambda_pair > 0.0 && pair_rounds.iter().any(|r| !r.is_empty());
    let out = propagate_with(params, cfg, profiles, g, use_pair)?;
    let z = &out.z;
    let pos: Vec<f64> = batch
        .triplets
        .iter()
        .map(|t| z.row(t.user.index()).dot(&z.row(t.pos.index())))
        .collect();
    let neg: Vec<f64> = batch
        .triplets
        .iter()
        .map(|t| z.row(t.user.index()).dot(&z.row(t.neg.index())))
        .collect();
    let (rec, dx) = bpr_loss_grad(&pos, &neg);
    let mut dz = Array2::zeros(z.raw_dim());
    for (t, &d) in batch.triplets.iter().zip(&dx) {
        let zu = z.row(t.user.index()).to_owned();
        let diff = &z.row(t.pos.index()) - &z.row(t.neg.index());
        dz.row_mut(t.user.index()).scaled_add(d, &diff);
        dz.row_mut(t.pos.index()).scaled_add(d, &zu);
        dz.row_mut(t.neg.index()).scaled_add(-d, &zu);
    }
    let (pair, dq) = if use_pair {
        let (l, dzp, dq) = matching_loss_grad(z, &out.q, pair_rounds)?;
        dz.scaled_add(lambda_pair, &dzp);
        (l, Some(dq * lambda_pair))
    } else {
        (0.0, None)
    };
    let total = rec + lambda_pair * pair;
    let breakdown = LossBreakdown { rec, pair, total };
    if !total.is_finite() {
        return Ok((breakdown, params.zeros_like()));
    }
    let grads = backward(params, cfg, profiles, g, &out, &dz, dq.as_ref())?;
    Ok((breakdown, grads))
}

/// One optimizer step on `batch`. The matching-loss subsets are drawn from
/// `rng` among entities whose profile is active.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    params: &mut ModelParams,
    opt: &mut Adam,
    batch: &Batch,
    profiles: &Profiles,
    g: &KnowledgeGraph,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<LossBreakdown, TrainError> {
    let rounds = if cfg.lambda_pair > 0.0 {
        sample_rounds(
            &profiles.active_indices(),
            cfg.pair_fraction,
            cfg.pair_rounds,
            rng,
        )
    } else {
        Vec::new()
    };
    let (loss, grads) = batch_gradients(
        params,
        model_cfg,
        batch,
        profiles,
        g,
        cfg.lambda_pair,
        &rounds,
    )?;
    if !loss.total.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            epoch: 0,
            batch: 0,
            detail: format!("rec={} pair={}", loss.rec, loss.pair),
        });
    }
    opt.step(params, &grads);
    if let Some((name, i, j)) = params.first_non_finite() {
        return Err(TrainError::NonFiniteLoss {
            epoch: 0,
            batch: 0,
            detail: format!("{name}[{i},{j}] after update"),
        });
    }
    Ok(loss)
}

/// Keeps the epoch with the strictly best metric.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    /// Records an epoch's metric; returns true when it is a new best.
    pub fn update(&mut self, epoch: usize, metric: f64) -> bool {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad_epochs >= self.patience
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_rec: f64,
    pub loss_pair: f64,
    pub val_recall: f64,
    pub val_ndcg: f64,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_seconds: Option<f64>,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub model_config: ModelConfig,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub epochs_run: usize,
    pub log: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn log_jsonl(&self) -> String {
        log_to_jsonl(&self.log)
    }

    pub fn write_log(&self, path: &Path) -> Result<(), TrainError> {
        let mut f = std::fs::File::create(path)
            .map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        f.write_all(self.log_jsonl().as_bytes())
            .map_err(|e| TrainError::Io(e.to_string()))
    }
}

pub fn log_to_jsonl(log: &[EpochRecord]) -> String {
    log.iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// Trains on `split.train` over the graph restricted to those interactions,
/// selecting the epoch with the best validation Recall@`eval_k`.
pub fn fit(
    g: &KnowledgeGraph,
    split: &InteractionSplit,
    profiles: &Profiles,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    fit_with_progress(g, split, profiles, cfg, |_| {})
}

pub fn fit_with_progress(
    g: &KnowledgeGraph,
    split: &InteractionSplit,
    profiles: &Profiles,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if split.validation.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let train_graph = g.with_interactions(&split.train);
    let model_cfg = cfg.model_config(profiles.dim());
    let mut params = ModelParams::init(&model_cfg, g.num_entities(), g.num_relations(), cfg.seed);
    let mut opt = Adam::new(cfg.adam(), &params);
    let sampler = NegativeSampler::new(g);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut log = Vec::new();
    let start = Instant::now();
    let mut positives = split.train.clone();

    for epoch in 1..=cfg.max_epochs {
        let mut rng = stage_rng(cfg.seed, "epoch", epoch as u64);
        positives.shuffle(&mut rng);
        let (mut rec_sum, mut pair_sum, mut batches) = (0.0, 0.0, 0usize);
        for (b, chunk) in positives.chunks(cfg.batch_size).enumerate() {
            let batch = sampler.sample(chunk, g, &mut rng)?;
            let loss = train_step(
                &mut params,
                &mut opt,
                &batch,
                profiles,
                &train_graph,
                &model_cfg,
                cfg,
                &mut rng,
            )
            .map_err(|e| match e {
                TrainError::NonFiniteLoss { detail, .. } => TrainError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail,
                },
                other => other,
            })?;
            rec_sum += loss.rec;
            pair_sum += loss.pair;
            batches += 1;
        }
        let out = propagate(&params, &model_cfg, profiles, &train_graph)?;
        let report = evaluate_validation(&out.z, &train_graph, split, &[cfg.eval_k])?;
        let record = EpochRecord {
            epoch,
            loss_rec: rec_sum / batches as f64,
            loss_pair: pair_sum / batches as f64,
            val_recall: report.recall[0],
            val_ndcg: report.ndcg[0],
            k: cfg.eval_k,
            wall_seconds: cfg.log_wall_time.then(|| start.elapsed().as_secs_f64()),
        };
        progress(&record);
        log.push(record);
        if stopper.update(epoch, report.recall[0]) {
            best = params.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    Ok(TrainOutcome {
        params: best,
        model_config: model_cfg,
        best_epoch: stopper.best_epoch,
        best_metric: stopper.best.unwrap_or(0.0),
        epochs_run: log.len(),
        log,
    })
}
