//! Ablation variants and the interaction-ratio sweep.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::{evaluate, EvalOptions, MetricReport};
use crate::graph::{downsample_per_user, InteractionSplit, KnowledgeGraph, Role};
use crate::model::{propagate, FusionMode, Profiles};
use crate::trainer::{fit, TrainConfig, TrainError};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum AblationVariant {
    Full,
    Fusion(FusionMode),
    DropUserProfiles,
    DropItemProfiles,
    DropEntityProfiles,
    /// The profile is injected but never subtracted again.
    DropRemoval,
    DropMatching,
    /// No injection and no matching loss.
    NoProfile,
}

impl AblationVariant {
    /// The profile-removal variants, in reporting order.
    pub const PROFILE_VARIANTS: [AblationVariant; 7] = [
        AblationVariant::Full,
        AblationVariant::DropUserProfiles,
        AblationVariant::DropItemProfiles,
        AblationVariant::DropEntityProfiles,
        AblationVariant::DropRemoval,
        AblationVariant::DropMatching,
        AblationVariant::NoProfile,
    ];

    pub fn fusion_variants() -> Vec<AblationVariant> {
        FusionMode::ALL
            .into_iter()
            .map(AblationVariant::Fusion)
            .collect()
    }

    pub fn name(&self) -> String {
        match self {
            AblationVariant::Full => "full".into(),
            AblationVariant::Fusion(m) => format!("fusion:{m}"),
            AblationVariant::DropUserProfiles => "drop-user".into(),
            AblationVariant::DropItemProfiles => "drop-item".into(),
            AblationVariant::DropEntityProfiles => "drop-entity".into(),
            AblationVariant::DropRemoval => "drop-removal".into(),
            AblationVariant::DropMatching => "drop-matching".into(),
            AblationVariant::NoProfile => "no-profile".into(),
        }
    }

    /// Derives the training configuration and profile mask of this variant.
    pub fn apply(
        &self,
        base: &TrainConfig,
        profiles: &Profiles,
        g: &KnowledgeGraph,
    ) -> (TrainConfig, Profiles) {
        let mut cfg = base.clone();
        let mut p = profiles.clone();
        match self {
            AblationVariant::Full => {}
            AblationVariant::Fusion(m) => cfg.fusion = *m,
            AblationVariant::DropUserProfiles => p.deactivate_role(g, Role::User),
            AblationVariant::DropItemProfiles => p.deactivate_role(g, Role::Item),
            AblationVariant::DropEntityProfiles => p.deactivate_role(g, Role::Auxiliary),
            AblationVariant::DropRemoval => cfg.fusion = FusionMode::AddWithoutInverse,
            AblationVariant::DropMatching => cfg.lambda_pair = 0.0,
            AblationVariant::NoProfile => {
                cfg.lambda_p = 0.0;
                cfg.lambda_pair = 0.0;
            }
        }
        (cfg, p)
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(mode) = s.strip_prefix("fusion:") {
            return mode
                .parse()
                .map(AblationVariant::Fusion)
                .map_err(|e| e.to_string());
        }
        Self::PROFILE_VARIANTS
            .into_iter()
            .find(|v| v.name() == s)
            .or_else(|| match s {
                "user" => Some(AblationVariant::DropUserProfiles),
                "item" => Some(AblationVariant::DropItemProfiles),
                "entity" => Some(AblationVariant::DropEntityProfiles),
                "removal" => Some(AblationVariant::DropRemoval),
                "matching" => Some(AblationVariant::DropMatching),
                "profile" | "none" => Some(AblationVariant::NoProfile),
                _ => None,
            })
            .ok_or_else(|| format!("unknown ablation variant `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationResult {
    pub variant: String,
    pub best_epoch: usize,
    pub val_recall: f64,
    pub test: MetricReport,
}

/// Trains and evaluates one variant.
pub fn run_variant(
    variant: AblationVariant,
    g: &KnowledgeGraph,
    split: &InteractionSplit,
    profiles: &Profiles,
    base: &TrainConfig,
    opts: &EvalOptions,
) -> Result<AblationResult, TrainError> {
    let (cfg, p) = variant.apply(base, profiles, g);
    let outcome = fit(g, split, &p, &cfg)?;
    let train_graph = g.with_interactions(&split.train);
    let out = propagate(&outcome.params, &outcome.model_config, &p, &train_graph)?;
    let test = evaluate(&out.z, &train_graph, split, opts)?;
    Ok(AblationResult {
        variant: variant.name(),
        best_epoch: outcome.best_epoch,
        val_recall: outcome.best_metric,
        test,
    })
}

pub fn run_ablation(
    variants: &[AblationVariant],
    g: &KnowledgeGraph,
    split: &InteractionSplit,
    profiles: &Profiles,
    base: &TrainConfig,
    opts: &EvalOptions,
) -> Result<Vec<AblationResult>, TrainError> {
    variants
        .iter()
        .map(|v| run_variant(*v, g, split, profiles, base, opts))
        .collect()
}

/// Aligned table of test Recall and NDCG per variant.
pub fn ablation_table(results: &[AblationResult]) -> String {
    let Some(first) = results.first() else {
        return String::new();
    };
    let mut out = format!("{:<28}", "variant");
    for k in &first.test.ks {
        out.push_str(&format!(
            "  {:>9}  {:>9}",
            format!("R@{k}"),
            format!("N@{k}")
        ));
    }
    out.push('\n');
    for r in results {
        out.push_str(&format!("{:<28}", r.variant));
        for i in 0..r.test.ks.len() {
            out.push_str(&format!(
                "  {:>9.4}  {:>9.4}",
                r.test.recall[i], r.test.ndcg[i]
            ));
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub ratio: f64,
    pub train_interactions: usize,
    pub test: MetricReport,
}

pub const SWEEP_RATIOS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Retrains on the training split downsampled to each ratio (every user
/// keeps at least one interaction) and evaluates on the unchanged test split.
/// `make_profiles` rebuilds profiles for each downsampled split so held-out
/// interactions never reach a profile.
pub fn interaction_sweep(
    g: &KnowledgeGraph,
    split: &InteractionSplit,
    base: &TrainConfig,
    ratios: &[f64],
    opts: &EvalOptions,
    mut make_profiles: impl FnMut(&InteractionSplit) -> Result<Profiles, TrainError>,
) -> Result<Vec<SweepPoint>, TrainError> {
    let mut points = Vec::new();
    for &ratio in ratios {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "interaction ratio {ratio} is outside (0, 1]"
            )));
        }
        let train = downsample_per_user(&split.train, ratio, base.seed);
        let sub = InteractionSplit {
            train,
            validation: split.validation.clone(),
            test: split.test.clone(),
            seed: split.seed,
        };
        let profiles = make_profiles(&sub)?;
        let outcome = fit(g, &sub, &profiles, base)?;
        let train_graph = g.with_interactions(&sub.train);
        let out = propagate(
            &outcome.params,
            &outcome.model_config,
            &profiles,
            &train_graph,
        )?;
        let test = evaluate(&out.z, &train_graph, &sub, opts)?;
        points.push(SweepPoint {
            ratio,
            train_interactions: sub.train.len(),
            test,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_parse_back() {
        for v in AblationVariant::PROFILE_VARIANTS
            .into_iter()
            .chain(AblationVariant::fusion_variants())
        {
            assert_eq!(v.name().parse::<AblationVariant>().unwrap(), v);
        }
        assert_eq!(
            "removal".parse::<AblationVariant>().unwrap(),
            AblationVariant::DropRemoval
        );
    }

    #[test]
    fn drop_removal_is_add_without_inverse() {
        let g = crate::graph::GraphBuilder::new()
            .users(["u"])
            .items(["i"])
            .triple("u", "interact", "i")
            .build()
            .unwrap();
        let p = Profiles::none(g.num_entities(), 2);
        let (a, _) = AblationVariant::DropRemoval.apply(&TrainConfig::default(), &p, &g);
        let (b, _) = AblationVariant::Fusion(FusionMode::AddWithoutInverse).apply(
            &TrainConfig::default(),
            &p,
            &g,
        );
        assert_eq!(a, b);
    }
}
