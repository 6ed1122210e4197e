use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{EntityId, GraphError, KnowledgeGraph};
use crate::seed::stage_rng;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<(), GraphError> {
        let parts = [self.train, self.validation, self.test];
        let ok = parts.iter().all(|p| p.is_finite() && *p >= 0.0)
            && (parts.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(GraphError::InvalidRatios((
                self.train,
                self.validation,
                self.test,
            )))
        }
    }
}

/// Disjoint train/validation/test partition of the interaction pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionSplit {
    pub train: Vec<(EntityId, EntityId)>,
    pub validation: Vec<(EntityId, EntityId)>,
    pub test: Vec<(EntityId, EntityId)>,
    pub seed: u64,
}

impl InteractionSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every pair, in train, validation, test order.
    pub fn all(&self) -> impl Iterator<Item = &(EntityId, EntityId)> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }
}

fn floor_share(ratio: f64, n: usize) -> usize {
    // 0.7 * 10 is 7.000000000000001 or 6.999999999999999 depending on the
    // operation order; absorb that before flooring.
    (ratio * n as f64 + 1e-9).floor() as usize
}

/// Per-user split: each user's interactions are shuffled with a generator
/// derived from `seed` and the user id; `floor(train * n)` go to train,
/// `floor(validation * n)` to validation and the rest to test. A user whose
/// train share rounds to zero takes one interaction back from test (or
/// validation), so every user keeps at least one training pair.
pub fn split_interactions(
    g: &KnowledgeGraph,
    ratios: SplitRatios,
    seed: u64,
) -> Result<InteractionSplit, GraphError> {
    ratios.validate()?;
    let mut per_user: Vec<Vec<EntityId>> = vec![Vec::new(); g.num_entities()];
    let mut seen = HashSet::new();
    for (u, v) in g.interactions() {
        if seen.insert((u, v)) {
            per_user[u.index()].push(v);
        }
    }

    let mut split = InteractionSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for &u in g.users() {
        let mut items = std::mem::take(&mut per_user[u.index()]);
        let n = items.len();
        if n == 0 {
            return Err(GraphError::UserWithoutInteractions(
                g.entity_label(u).to_owned(),
            ));
        }
        items.shuffle(&mut stage_rng(seed, "split", u64::from(u.0)));

        let mut train = floor_share(ratios.train, n);
        let mut val = floor_share(ratios.validation, n).min(n - train);
        if train == 0 {
            train = 1;
            if train + val > n {
                val -= 1;
            }
        }
        split.train.extend(items[..train].iter().map(|&v| (u, v)));
        split
            .validation
            .extend(items[train..train + val].iter().map(|&v| (u, v)));
        split
            .test
            .extend(items[train + val..].iter().map(|&v| (u, v)));
    }
    Ok(split)
}

/// Downsamples `pairs` to `ratio` of each user's interactions, keeping at
/// least one per user.
pub fn downsample_per_user(
    pairs: &[(EntityId, EntityId)],
    ratio: f64,
    seed: u64,
) -> Vec<(EntityId, EntityId)> {
    let mut by_user: std::collections::BTreeMap<EntityId, Vec<EntityId>> = Default::default();
    for &(u, v) in pairs {
        by_user.entry(u).or_default().push(v);
    }
    let mut out = Vec::new();
    for (u, mut items) in by_user {
        items.shuffle(&mut stage_rng(seed, "downsample", u64::from(u.0)));
        let keep = ((ratio * items.len() as f64 + 1e-9).floor() as usize).clamp(1, items.len());
        out.extend(items[..keep].iter().map(|&v| (u, v)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, INTERACT};

    fn graph_with(counts: &[usize]) -> KnowledgeGraph {
        let mut b = GraphBuilder::new();
        let users: Vec<String> = (0..counts.len()).map(|u| format!("u{u}")).collect();
        let items: Vec<String> = (0..20).map(|v| format!("v{v}")).collect();
        b = b.users(users.clone()).items(items.clone());
        for (u, &c) in counts.iter().enumerate() {
            for v in 0..c {
                b = b.triple(&users[u], INTERACT, &items[v]);
            }
        }
        b.build().unwrap()
    }

    #[test]
    fn ten_interactions_split_seven_one_two() {
        let g = graph_with(&[10]);
        let s = split_interactions(&g, SplitRatios::default(), 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (7, 1, 2));
    }

    #[test]
    fn single_interaction_goes_to_train() {
        let g = graph_with(&[1]);
        let s = split_interactions(&g, SplitRatios::default(), 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (1, 0, 0));
    }

    #[test]
    fn same_seed_same_split() {
        let g = graph_with(&[10, 5, 3, 17]);
        let a = split_interactions(&g, SplitRatios::default(), 3).unwrap();
        let b = split_interactions(&g, SplitRatios::default(), 3).unwrap();
        assert_eq!(a, b);
        let c = split_interactions(&g, SplitRatios::default(), 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn user_without_interactions() {
        let g = GraphBuilder::new()
            .users(["u", "idle"])
            .items(["v"])
            .triple("u", INTERACT, "v")
            .build()
            .unwrap();
        let err = split_interactions(&g, SplitRatios::default(), 1).unwrap_err();
        assert_eq!(err, GraphError::UserWithoutInteractions("idle".into()));
    }

    #[test]
    fn ratios_must_sum_to_one() {
        let g = graph_with(&[3]);
        let bad = SplitRatios {
            train: 0.5,
            validation: 0.1,
            test: 0.1,
        };
        assert!(matches!(
            split_interactions(&g, bad, 1),
            Err(GraphError::InvalidRatios(_))
        ));
    }

    #[test]
    fn downsample_keeps_one_per_user() {
        let g = graph_with(&[10, 1, 4]);
        let pairs = g.interactions();
        let small = downsample_per_user(&pairs, 0.1, 9);
        assert_eq!(small.len(), 1 + 1 + 1);
        let half = downsample_per_user(&pairs, 0.5, 9);
        assert_eq!(half.len(), 5 + 1 + 2);
    }
}
