use std::collections::{BTreeSet, HashMap};

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::templates::{Hop, TemplateSet};
use super::{ProfileError, ProfileKind, ProfileStore};
use crate::graph::{EntityId, KnowledgeGraph, RelationId};
use crate::seed::stage_rng;

/// One user review of one item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub user_label: String,
    pub item_label: String,
    pub text: String,
}

/// Reviews indexed by item and by user, restricted to interactions present
/// in the graph they were indexed against.
#[derive(Clone, Debug, Default)]
pub struct ReviewIndex {
    by_item: HashMap<EntityId, Vec<String>>,
    by_user: HashMap<EntityId, Vec<String>>,
}

impl ReviewIndex {
    pub fn new(g: &KnowledgeGraph, reviews: &[Review]) -> Self {
        let interacted = g.interacted_items();
        let mut index = Self::default();
        for r in reviews {
            let (Some(u), Some(v)) = (g.entity_id(&r.user_label), g.entity_id(&r.item_label))
            else {
                continue;
            };
            if !g.is_user(u) || !interacted[u.index()].contains(&v) || r.text.trim().is_empty() {
                continue;
            }
            index.by_item.entry(v).or_default().push(r.text.clone());
            index.by_user.entry(u).or_default().push(r.text.clone());
        }
        index
    }

    pub fn for_item(&self, v: EntityId) -> &[String] {
        self.by_item.get(&v).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn for_user(&self, u: EntityId) -> &[String] {
        self.by_user.get(&u).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct PromptLimits {
    pub max_reviews: usize,
    pub max_related: usize,
    pub max_twohop_items: usize,
}

impl Default for PromptLimits {
    fn default() -> Self {
        Self {
            max_reviews: 5,
            max_related: 8,
            max_twohop_items: 5,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartKind {
    Description,
    Review,
    RelatedProfile,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptPart {
    pub kind: PartKind,
    /// The entity whose profile a related-profile part quotes.
    pub source: Option<EntityId>,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptBundle {
    pub system: String,
    pub user_message: String,
    pub parts: Vec<PromptPart>,
}

impl PromptBundle {
    /// The user message is the parts in order, one `Kind: text` line each.
    pub fn new(system: &str, parts: Vec<PromptPart>) -> Self {
        let user_message = parts
            .iter()
            .map(|p| {
                let header = match p.kind {
                    PartKind::Description => "Fact",
                    PartKind::Review => "Review",
                    PartKind::RelatedProfile => "Profile",
                };
                format!("{header}: {}", p.text)
            })
            .collect::<Vec<_>>()
            .join("\n");
        Self {
            system: system.to_owned(),
            user_message,
            parts,
        }
    }

    /// Profile text used when no language model refines the prompt: the
    /// part texts joined by single spaces.
    pub fn template_text(&self) -> String {
        self.parts
            .iter()
            .map(|p| p.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn sample<'a, T>(pool: &'a [T], cap: usize, rng: &mut impl rand::Rng) -> Vec<&'a T> {
    if pool.len() <= cap {
        pool.iter().collect()
    } else {
        pool.choose_multiple(rng, cap).collect()
    }
}

/// Precomputed per-entity facts shared by every prompt of a profiling run.
pub struct ProfileContext<'g> {
    graph: &'g KnowledgeGraph,
    /// Non-interaction, non-self-loop triples touching each entity, as
    /// `(relation, other endpoint)` in triple order.
    facts: Vec<Vec<(RelationId, EntityId)>>,
    interacted: Vec<BTreeSet<EntityId>>,
}

impl<'g> ProfileContext<'g> {
    pub fn new(graph: &'g KnowledgeGraph) -> Self {
        let interact = graph.interact_relation();
        let mut facts = vec![Vec::new(); graph.num_entities()];
        for t in graph
            .base_triples()
            .iter()
            .filter(|t| t.relation != interact && !t.is_self_loop())
        {
            facts[t.head.index()].push((t.relation, t.tail));
            facts[t.tail.index()].push((t.relation, t.head));
        }
        Self {
            graph,
            facts,
            interacted: graph.interacted_items(),
        }
    }

    pub fn graph(&self) -> &'g KnowledgeGraph {
        self.graph
    }

    /// Distinct items linked to `e` by a non-interaction triple.
    fn linked_items(&self, e: EntityId) -> Vec<(RelationId, EntityId)> {
        let mut out: Vec<(RelationId, EntityId)> = Vec::new();
        for &(r, other) in &self.facts[e.index()] {
            if self.graph.is_item(other) && !out.iter().any(|(_, o)| *o == other) {
                out.push((r, other));
            }
        }
        out
    }

    /// Items other than `exclude` linked to `e` through relation `r`.
    fn co_items(&self, e: EntityId, r: RelationId, exclude: EntityId) -> Vec<EntityId> {
        let mut out = Vec::new();
        for &(rel, other) in &self.facts[e.index()] {
            if rel == r && other != exclude && self.graph.is_item(other) && !out.contains(&other) {
                out.push(other);
            }
        }
        out
    }
}

fn require_profile<'s>(
    store: &'s ProfileStore,
    g: &KnowledgeGraph,
    target: EntityId,
    dep: EntityId,
) -> Result<&'s str, ProfileError> {
    store
        .get(dep)
        .map(|p| p.text.as_str())
        .ok_or_else(|| ProfileError::MissingDependencyProfile {
            target: g.entity_label(target).to_owned(),
            dependency: g.entity_label(dep).to_owned(),
        })
}

/// Assembles the prompt for one entity.
///
/// Item prompts carry rendered 1-hop facts, one 2-hop line per linked entity
/// and sampled reviews. Auxiliary prompts carry entity-side facts and the
/// profiles of sampled linked items. User prompts carry the profiles of
/// sampled interacted items and sampled reviews. Sampling is uniform without
/// replacement from a generator derived from `seed`, the stage and the entity.
#[allow(clippy::too_many_arguments)]
pub fn build_prompt(
    kind: ProfileKind,
    target: EntityId,
    g: &KnowledgeGraph,
    templates: &TemplateSet,
    store: &ProfileStore,
    reviews: &ReviewIndex,
    limits: &PromptLimits,
    seed: u64,
) -> Result<PromptBundle, ProfileError> {
    ProfileContext::new(g).build_prompt(kind, target, templates, store, reviews, limits, seed)
}

impl ProfileContext<'_> {
    /// See [`build_prompt`].
    #[allow(clippy::too_many_arguments)]
    pub fn build_prompt(
        &self,
        kind: ProfileKind,
        target: EntityId,
        templates: &TemplateSet,
        store: &ProfileStore,
        reviews: &ReviewIndex,
        limits: &PromptLimits,
        seed: u64,
    ) -> Result<PromptBundle, ProfileError> {
        let g = self.graph;
        g.check_entity(target)
            .map_err(|e| ProfileError::Graph(e.to_string()))?;
        let label = g.entity_label(target);
        let mut parts = Vec::new();
        let desc = |text: String| PromptPart {
            kind: PartKind::Description,
            source: None,
            text,
        };
        let review = |text: &String| PromptPart {
            kind: PartKind::Review,
            source: None,
            text: text.clone(),
        };

        let system = match kind {
            ProfileKind::Item => {
                let mut rng = stage_rng(seed, "profile-item", u64::from(target.0));
                let facts = &self.facts[target.index()];
                for &(rel, other) in facts {
                    parts.push(desc(templates.render(
                        g.relation_label(rel),
                        Hop::One,
                        label,
                        g.entity_label(other),
                        &[],
                        0,
                    )?));
                }
                let mut seen = Vec::new();
                for &(rel, other) in facts {
                    if seen.contains(&(rel, other)) {
                        continue;
                    }
                    seen.push((rel, other));
                    let co_items = self.co_items(other, rel, target);
                    if co_items.is_empty() {
                        continue;
                    }
                    let picked = sample(&co_items, limits.max_twohop_items, &mut rng);
                    let names: Vec<&str> = picked.iter().map(|&&v| g.entity_label(v)).collect();
                    parts.push(desc(templates.render(
                        g.relation_label(rel),
                        Hop::Two,
                        label,
                        g.entity_label(other),
                        &names,
                        limits.max_twohop_items,
                    )?));
                }
                for r in sample(reviews.for_item(target), limits.max_reviews, &mut rng) {
                    parts.push(review(r));
                }
                &templates.instructions.item
            }
            ProfileKind::Auxiliary => {
                let mut rng = stage_rng(seed, "profile-auxiliary", u64::from(target.0));
                let linked = self.linked_items(target);
                for (_, v) in &linked {
                    require_profile(store, g, target, *v)?;
                }
                let picked = sample(&linked, limits.max_related, &mut rng);
                for (rel, v) in &picked {
                    parts.push(desc(templates.render(
                        g.relation_label(*rel),
                        Hop::OneReversed,
                        g.entity_label(*v),
                        label,
                        &[],
                        0,
                    )?));
                }
                for (_, v) in &picked {
                    let text = require_profile(store, g, target, *v)?;
                    parts.push(PromptPart {
                        kind: PartKind::RelatedProfile,
                        source: Some(*v),
                        text: text.to_owned(),
                    });
                }
                &templates.instructions.auxiliary
            }
            ProfileKind::User => {
                let mut rng = stage_rng(seed, "profile-user", u64::from(target.0));
                let items: Vec<EntityId> =
                    self.interacted[target.index()].iter().copied().collect();
                for v in &items {
                    require_profile(store, g, target, *v)?;
                }
                for v in sample(&items, limits.max_related, &mut rng) {
                    let text = require_profile(store, g, target, *v)?;
                    parts.push(PromptPart {
                        kind: PartKind::RelatedProfile,
                        source: Some(*v),
                        text: text.to_owned(),
                    });
                }
                for r in sample(reviews.for_user(target), limits.max_reviews, &mut rng) {
                    parts.push(review(r));
                }
                &templates.instructions.user
            }
        };
        if parts.is_empty() {
            parts.push(desc(format!("{label}.")));
        }
        Ok(PromptBundle::new(system, parts))
    }
}
