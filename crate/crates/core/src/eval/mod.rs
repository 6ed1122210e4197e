//! Full-ranking top-K evaluation.

pub mod ablation;

use std::collections::BTreeSet;
use std::fmt;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EntityId, InteractionSplit, KnowledgeGraph};
use crate::model::{score_all_items, ModelError};

pub const DEFAULT_KS: [usize; 3] = [10, 20, 40];

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("relevant set is empty")]
    EmptyRelevantSet,
    #[error("cutoff K must be positive")]
    InvalidK,
    #[error("no user has a relevant item to evaluate")]
    NothingToEvaluate,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Items for one user, best first. Ties go to the lower item id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedList {
    pub user: EntityId,
    pub items: Vec<EntityId>,
}

/// Ranks every item not in `masked` by its score for `u`.
pub fn rank_items(
    z: &Array2<f64>,
    g: &KnowledgeGraph,
    u: EntityId,
    masked: &BTreeSet<EntityId>,
) -> Result<RankedList, EvalError> {
    let scores = score_all_items(z, g, u)?;
    let mut scored: Vec<(EntityId, f64)> = g
        .items()
        .iter()
        .zip(scores)
        .filter(|(v, _)| !masked.contains(v))
        .map(|(v, s)| (*v, s))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(RankedList {
        user: u,
        items: scored.into_iter().map(|(v, _)| v).collect(),
    })
}

fn check(relevant: &BTreeSet<EntityId>, k: usize) -> Result<(), EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevantSet);
    }
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    Ok(())
}

pub fn recall_at_k(
    ranked: &RankedList,
    relevant: &BTreeSet<EntityId>,
    k: usize,
) -> Result<f64, EvalError> {
    check(relevant, k)?;
    let hits = ranked
        .items
        .iter()
        .take(k)
        .filter(|v| relevant.contains(v))
        .count();
    Ok(hits as f64 / relevant.len() as f64)
}

pub fn ndcg_at_k(
    ranked: &RankedList,
    relevant: &BTreeSet<EntityId>,
    k: usize,
) -> Result<f64, EvalError> {
    check(relevant, k)?;
    let gain = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranked
        .items
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, v)| relevant.contains(v))
        .map(|(i, _)| gain(i))
        .sum();
    let idcg: f64 = (0..k.min(relevant.len())).map(gain).sum();
    Ok(dcg / idcg)
}

/// Mean metrics over evaluated users, one entry per cutoff.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub users: usize,
    pub config_hash: Option<String>,
}

#[derive(Serialize)]
struct MetricRecord<'a> {
    k: usize,
    recall: f64,
    ndcg: f64,
    users: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_hash: Option<&'a str>,
}

impl MetricReport {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recall[i])
    }

    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.ndcg[i])
    }

    /// One JSON object per cutoff.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, &k) in self.ks.iter().enumerate() {
            let rec = MetricRecord {
                k,
                recall: self.recall[i],
                ndcg: self.ndcg[i],
                users: self.users,
                config_hash: self.config_hash.as_deref(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>4}  {:>9}  {:>9}", "K", "Recall", "NDCG")?;
        for (i, k) in self.ks.iter().enumerate() {
            writeln!(
                f,
                "{:>4}  {:>9.4}  {:>9.4}",
                k, self.recall[i], self.ndcg[i]
            )?;
        }
        write!(f, "users evaluated: {}", self.users)
    }
}

fn group(g: &KnowledgeGraph, pairs: &[(EntityId, EntityId)]) -> Vec<BTreeSet<EntityId>> {
    let mut out = vec![BTreeSet::new(); g.num_entities()];
    for &(u, v) in pairs {
        out[u.index()].insert(v);
    }
    out
}

/// Ranks for every user with at least one relevant pair, masking the items
/// of every pair in `masked`, and averages Recall@K and NDCG@K.
pub fn evaluate_pairs(
    z: &Array2<f64>,
    g: &KnowledgeGraph,
    relevant: &[(EntityId, EntityId)],
    masked: &[&[(EntityId, EntityId)]],
    ks: &[usize],
) -> Result<MetricReport, EvalError> {
    if ks.contains(&0) {
        return Err(EvalError::InvalidK);
    }
    let rel = group(g, relevant);
    let mut mask = vec![BTreeSet::new(); g.num_entities()];
    for pairs in masked {
        for &(u, v) in *pairs {
            mask[u.index()].insert(v);
        }
    }
    let users: Vec<EntityId> = g
        .users()
        .iter()
        .copied()
        .filter(|u| !rel[u.index()].is_empty())
        .collect();
    if users.is_empty() {
        return Err(EvalError::NothingToEvaluate);
    }
    let per_user: Vec<(Vec<f64>, Vec<f64>)> = users
        .par_iter()
        .map(|&u| {
            let ranked = rank_items(z, g, u, &mask[u.index()])?;
            let r = &rel[u.index()];
            let recall = ks
                .iter()
                .map(|&k| recall_at_k(&ranked, r, k))
                .collect::<Result<Vec<_>, _>>()?;
            let ndcg = ks
                .iter()
                .map(|&k| ndcg_at_k(&ranked, r, k))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((recall, ndcg))
        })
        .collect::<Result<_, EvalError>>()?;
    let n = users.len() as f64;
    let mut recall = vec![0.0; ks.len()];
    let mut ndcg = vec![0.0; ks.len()];
    for (r, d) in &per_user {
        for i in 0..ks.len() {
            recall[i] += r[i];
            ndcg[i] += d[i];
        }
    }
    Ok(MetricReport {
        ks: ks.to_vec(),
        recall: recall.into_iter().map(|v| v / n).collect(),
        ndcg: ndcg.into_iter().map(|v| v / n).collect(),
        users: users.len(),
        config_hash: None,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    /// Also mask validation items when ranking for the test split.
    pub mask_validation: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ks: DEFAULT_KS.to_vec(),
            mask_validation: false,
        }
    }
}

/// Test-split evaluation with training items masked.
pub fn evaluate(
    z: &Array2<f64>,
    g: &KnowledgeGraph,
    split: &InteractionSplit,
    opts: &EvalOptions,
) -> Result<MetricReport, EvalError> {
    if opts.mask_validation {
        evaluate_pairs(
            z,
            g,
            &split.test,
            &[&split.train, &split.validation],
            &opts.ks,
        )
    } else {
        evaluate_pairs(z, g, &split.test, &[&split.train], &opts.ks)
    }
}

/// Validation-split evaluation with training items masked.
pub fn evaluate_validation(
    z: &Array2<f64>,
    g: &KnowledgeGraph,
    split: &InteractionSplit,
    ks: &[usize],
) -> Result<MetricReport, EvalError> {
    evaluate_pairs(z, g, &split.validation, &[&split.train], ks)
}

/// Expected Recall@K of a uniformly random ranking: the mean over evaluated
/// users of `min(K, |C_u|) / |C_u|`, where `C_u` is the user's candidate set.
pub fn random_ranking_recall(
    g: &KnowledgeGraph,
    relevant: &[(EntityId, EntityId)],
    masked: &[(EntityId, EntityId)],
    k: usize,
) -> f64 {
    let rel = group(g, relevant);
    let mask = group(g, masked);
    let items = g.items().len();
    let users: Vec<&EntityId> = g
        .users()
        .iter()
        .filter(|u| !rel[u.index()].is_empty())
        .collect();
    if users.is_empty() {
        return 0.0;
    }
    let sum: f64 = users
        .iter()
        .map(|u| {
            let c = items - mask[u.index()].len();
            k.min(c) as f64 / c as f64
        })
        .sum();
    sum / users.len() as f64
}
