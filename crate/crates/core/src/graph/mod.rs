//! Knowledge-graph data model: dense entity and relation ids, the triple
//! store, the per-head neighbor index and user/item roles.
//!
//! User-item interactions are ordinary triples under the reserved
//! [`INTERACT`] relation. A graph is immutable once built; restricting it to
//! a subset of interactions (for example the training split) produces a new
//! graph that shares the same id space.

mod split;

pub use split::{downsample_per_user, split_interactions, InteractionSplit, SplitRatios};

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label of the user-item interaction relation.
pub const INTERACT: &str = "interact";

/// Suffix appended to a relation label to name its reverse relation.
pub const INVERSE_SUFFIX: &str = "_inverse";

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn is_self_loop(&self) -> bool {
        self.head == self.tail
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Item,
    Auxiliary,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Item => "item",
            Role::Auxiliary => "auxiliary",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph has no triples")]
    EmptyGraph,
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("label `{0}` declared as both user and item")]
    OverlappingRoles(String),
    #[error("invalid entity id {0}")]
    InvalidEntity(u32),
    #[error("interaction ({head}, {tail}) must link a user to an item")]
    InvalidInteraction { head: String, tail: String },
    #[error("user `{0}` has no interactions")]
    UserWithoutInteractions(String),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios((f64, f64, f64)),
}

/// A labelled triple before id assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl RawTriple {
    pub fn new(
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
    ) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

/// Builds a [`KnowledgeGraph`] from labelled triples.
///
/// Ids are assigned densely: declared users first, then declared items, then
/// every other label in order of first appearance. When no roles are
/// declared they are inferred from the interaction triples.
#[derive(Clone, Debug)]
pub struct GraphBuilder {
    users: Vec<String>,
    items: Vec<String>,
    triples: Vec<RawTriple>,
    add_inverse: bool,
    auto_register: bool,
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self {
            users: Vec::new(),
            items: Vec::new(),
            triples: Vec::new(),
            add_inverse: true,
            auto_register: true,
        }
    }

    pub fn users<I, S>(mut self, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.users.extend(labels.into_iter().map(Into::into));
        self
    }

    pub fn items<I, S>(mut self, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.items.extend(labels.into_iter().map(Into::into));
        self
    }

    pub fn triples(mut self, triples: impl IntoIterator<Item = RawTriple>) -> Self {
        self.triples.extend(triples);
        self
    }

    pub fn triple(mut self, head: &str, relation: &str, tail: &str) -> Self {
        self.triples.push(RawTriple::new(head, relation, tail));
        self
    }

    pub fn add_inverse(mut self, yes: bool) -> Self {
        self.add_inverse = yes;
        self
    }

    /// When disabled, triples may only reference declared users and items.
    pub fn auto_register(mut self, yes: bool) -> Self {
        self.auto_register = yes;
        self
    }

    pub fn build(self) -> Result<KnowledgeGraph, GraphError> {
        if self.triples.is_empty() {
            return Err(GraphError::EmptyGraph);
        }
        let (mut users, mut items) = (self.users, self.items);
        if users.is_empty() && items.is_empty() {
            for t in self.triples.iter().filter(|t| t.relation == INTERACT) {
                users.push(t.head.clone());
                items.push(t.tail.clone());
            }
        }

        let mut vocab = Vocabulary::default();
        let mut roles = Vec::new();
        let user_set: HashSet<&str> = users.iter().map(String::as_str).collect();
        for label in &items {
            if user_set.contains(label.as_str()) {
                return Err(GraphError::OverlappingRoles(label.clone()));
            }
        }
        for label in &users {
            if vocab.entity(label).is_none() {
                vocab.add_entity(label);
                roles.push(Role::User);
            }
        }
        for label in &items {
            if vocab.entity(label).is_none() {
                vocab.add_entity(label);
                roles.push(Role::Item);
            }
        }

        let interact = vocab.add_relation(INTERACT);
        let mut base = Vec::with_capacity(self.triples.len());
        for raw in &self.triples {
            let mut resolve = |label: &str| -> Result<EntityId, GraphError> {
                if let Some(id) = vocab.entity(label) {
                    return Ok(id);
                }
                if !self.auto_register {
                    return Err(GraphError::UnknownLabel(label.to_owned()));
                }
                roles.push(Role::Auxiliary);
                Ok(vocab.add_entity(label))
            };
            let head = resolve(&raw.head)?;
            let tail = resolve(&raw.tail)?;
            let relation = vocab
                .relation(&raw.relation)
                .unwrap_or_else(|| vocab.add_relation(&raw.relation));
            base.push(Triple {
                head,
                relation,
                tail,
            });
        }
        for t in base.iter().filter(|t| t.relation == interact) {
            if roles[t.head.index()] != Role::User || roles[t.tail.index()] != Role::Item {
                return Err(GraphError::InvalidInteraction {
                    head: vocab.entities[t.head.index()].clone(),
                    tail: vocab.entities[t.tail.index()].clone(),
                });
            }
        }
        if self.add_inverse {
            let forward = vocab.relations.len();
            for r in 0..forward {
                let label = format!("{}{}", vocab.relations[r], INVERSE_SUFFIX);
                vocab.add_relation(&label);
            }
        }
        Ok(KnowledgeGraph::assemble(
            vocab,
            roles,
            interact,
            base,
            self.add_inverse,
        ))
    }
}

#[derive(Clone, Debug, Default)]
struct Vocabulary {
    entities: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relations: Vec<String>,
    relation_index: HashMap<String, RelationId>,
}

impl Vocabulary {
    fn entity(&self, label: &str) -> Option<EntityId> {
        self.entity_index.get(label).copied()
    }

    fn relation(&self, label: &str) -> Option<RelationId> {
        self.relation_index.get(label).copied()
    }

    fn add_entity(&mut self, label: &str) -> EntityId {
        let id = EntityId(self.entities.len() as u32);
        self.entities.push(label.to_owned());
        self.entity_index.insert(label.to_owned(), id);
        id
    }

    fn add_relation(&mut self, label: &str) -> RelationId {
        let id = RelationId(self.relations.len() as u32);
        self.relations.push(label.to_owned());
        self.relation_index.insert(label.to_owned(), id);
        id
    }
}

/// Summary counts, printed by ingestion.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GraphStats {
    pub entities: usize,
    pub users: usize,
    pub items: usize,
    pub auxiliary: usize,
    pub relations: usize,
    pub interactions: usize,
    pub kg_triples: usize,
    pub stored_triples: usize,
    pub self_loops: usize,
    pub inverse_augmented: bool,
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "users                    {}", self.users)?;
        writeln!(f, "items                    {}", self.items)?;
        writeln!(f, "user-item interactions   {}", self.interactions)?;
        writeln!(f, "auxiliary entities       {}", self.auxiliary)?;
        writeln!(f, "relations                {}", self.relations)?;
        writeln!(f, "triples w/o interactions {}", self.kg_triples)?;
        writeln!(f, "stored directed edges    {}", self.stored_triples)?;
        writeln!(f, "self loops               {}", self.self_loops)?;
        write!(f, "inverse augmented        {}", self.inverse_augmented)
    }
}

#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    vocab: Vocabulary,
    roles: Vec<Role>,
    users: Vec<EntityId>,
    items: Vec<EntityId>,
    interact: RelationId,
    /// Relations present in the source data (inverse relations excluded).
    forward_relations: usize,
    /// Source triples; `triples[..base_len]`.
    base_len: usize,
    /// Source triples followed by their generated reverses.
    triples: Vec<Triple>,
    /// CSR over heads: triple indices of head `h` are `by_head[offsets[h]..offsets[h + 1]]`.
    offsets: Vec<usize>,
    by_head: Vec<u32>,
    inverse_augmented: bool,
}

impl KnowledgeGraph {
    fn assemble(
        vocab: Vocabulary,
        roles: Vec<Role>,
        interact: RelationId,
        base: Vec<Triple>,
        add_inverse: bool,
    ) -> Self {
        let forward_relations = if add_inverse {
            vocab.relations.len() / 2
        } else {
            vocab.relations.len()
        };
        let base_len = base.len();
        let mut triples = base;
        if add_inverse {
            for i in 0..base_len {
                let t = triples[i];
                if t.is_self_loop() {
                    continue;
                }
                triples.push(Triple {
                    head: t.tail,
                    relation: RelationId(t.relation.0 + forward_relations as u32),
                    tail: t.head,
                });
            }
        }

        let n = vocab.entities.len();
        let mut offsets = vec![0usize; n + 1];
        for t in &triples {
            offsets[t.head.index() + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut by_head = vec![0u32; triples.len()];
        for (k, t) in triples.iter().enumerate() {
            by_head[cursor[t.head.index()]] = k as u32;
            cursor[t.head.index()] += 1;
        }

        let users = (0..n)
            .filter(|&e| roles[e] == Role::User)
            .map(|e| EntityId(e as u32))
            .collect();
        let items = (0..n)
            .filter(|&e| roles[e] == Role::Item)
            .map(|e| EntityId(e as u32))
            .collect();
        Self {
            vocab,
            roles,
            users,
            items,
            interact,
            forward_relations,
            base_len,
            triples,
            offsets,
            by_head,
            inverse_augmented: add_inverse,
        }
    }

    /// A graph with the same ids whose interaction triples are exactly `pairs`.
    pub fn with_interactions(&self, pairs: &[(EntityId, EntityId)]) -> Self {
        let mut base: Vec<Triple> = self
            .base_triples()
            .iter()
            .filter(|t| t.relation != self.interact)
            .copied()
            .collect();
        base.extend(pairs.iter().map(|&(u, v)| Triple {
            head: u,
            relation: self.interact,
            tail: v,
        }));
        Self::assemble(
            self.vocab.clone(),
            self.roles.clone(),
            self.interact,
            base,
            self.inverse_augmented,
        )
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.relations.len()
    }

    /// Every stored directed edge, source triples first.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// The triples as given at construction, without generated reverses.
    pub fn base_triples(&self) -> &[Triple] {
        &self.triples[..self.base_len]
    }

    pub fn is_inverse_augmented(&self) -> bool {
        self.inverse_augmented
    }

    pub fn interact_relation(&self) -> RelationId {
        self.interact
    }

    /// True for relations generated by inverse augmentation.
    pub fn is_inverse_relation(&self, r: RelationId) -> bool {
        self.inverse_augmented && r.index() >= self.forward_relations
    }

    pub fn check_entity(&self, e: EntityId) -> Result<(), GraphError> {
        if e.index() < self.num_entities() {
            Ok(())
        } else {
            Err(GraphError::InvalidEntity(e.0))
        }
    }

    /// Outgoing `(relation, tail)` pairs of `h` in triple insertion order.
    pub fn neighbors(&self, h: EntityId) -> Result<Vec<(RelationId, EntityId)>, GraphError> {
        self.check_entity(h)?;
        Ok(self
            .neighbor_triples(h)
            .iter()
            .map(|&k| {
                let t = self.triples[k as usize];
                (t.relation, t.tail)
            })
            .collect())
    }

    /// Indices into [`triples`](Self::triples) of the outgoing edges of `h`.
    ///
    /// Panics if `h` is out of range.
    pub fn neighbor_triples(&self, h: EntityId) -> &[u32] {
        &self.by_head[self.offsets[h.index()]..self.offsets[h.index() + 1]]
    }

    pub fn degree(&self, h: EntityId) -> usize {
        self.offsets[h.index() + 1] - self.offsets[h.index()]
    }

    /// CSR row offsets over heads, length `num_entities() + 1`.
    pub fn head_offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Triple indices grouped by head, see [`head_offsets`](Self::head_offsets).
    pub fn triples_by_head(&self) -> &[u32] {
        &self.by_head
    }

    pub fn role(&self, e: EntityId) -> Role {
        self.roles[e.index()]
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn is_user(&self, e: EntityId) -> bool {
        self.roles.get(e.index()) == Some(&Role::User)
    }

    pub fn is_item(&self, e: EntityId) -> bool {
        self.roles.get(e.index()) == Some(&Role::Item)
    }

    pub fn users(&self) -> &[EntityId] {
        &self.users
    }

    pub fn items(&self) -> &[EntityId] {
        &self.items
    }

    pub fn auxiliaries(&self) -> Vec<EntityId> {
        (0..self.num_entities())
            .filter(|&e| self.roles[e] == Role::Auxiliary)
            .map(|e| EntityId(e as u32))
            .collect()
    }

    /// `(user, item)` pairs of every interaction triple, in insertion order.
    pub fn interactions(&self) -> Vec<(EntityId, EntityId)> {
        self.base_triples()
            .iter()
            .filter(|t| t.relation == self.interact)
            .map(|t| (t.head, t.tail))
            .collect()
    }

    /// Items each user interacted with, indexed by entity id.
    pub fn interacted_items(&self) -> Vec<BTreeSet<EntityId>> {
        let mut out = vec![BTreeSet::new(); self.num_entities()];
        for (u, v) in self.interactions() {
            out[u.index()].insert(v);
        }
        out
    }

    pub fn entity_label(&self, e: EntityId) -> &str {
        &self.vocab.entities[e.index()]
    }

    pub fn entity_labels(&self) -> &[String] {
        &self.vocab.entities
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.vocab.entity(label)
    }

    pub fn relation_label(&self, r: RelationId) -> &str {
        &self.vocab.relations[r.index()]
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.vocab.relation(label)
    }

    pub fn stats(&self) -> GraphStats {
        let interactions = self
            .base_triples()
            .iter()
            .filter(|t| t.relation == self.interact)
            .count();
        GraphStats {
            entities: self.num_entities(),
            users: self.users.len(),
            items: self.items.len(),
            auxiliary: self.num_entities() - self.users.len() - self.items.len(),
            relations: self.forward_relations,
            interactions,
            kg_triples: self.base_len - interactions,
            stored_triples: self.triples.len(),
            self_loops: self
                .base_triples()
                .iter()
                .filter(|t| t.is_self_loop())
                .count(),
            inverse_augmented: self.inverse_augmented,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> KnowledgeGraph {
        GraphBuilder::new()
            .users(["u1"])
            .items(["wicked", "dune"])
            .triple("u1", INTERACT, "wicked")
            .triple("wicked", "literaryGenre", "fantasy")
            .triple("dune", "literaryGenre", "scifi")
            .build()
            .unwrap()
    }

    #[test]
    fn three_triples_gain_three_inverses() {
        let g = small();
        assert_eq!(g.triples().len(), 6);
        assert_eq!(g.base_triples().len(), 3);
        assert!(g.stats().inverse_augmented);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert_eq!(
            GraphBuilder::new().build().unwrap_err(),
            GraphError::EmptyGraph
        );
    }

    #[test]
    fn overlapping_roles_are_rejected() {
        let err = GraphBuilder::new()
            .users(["a"])
            .items(["a"])
            .triple("a", "x", "b")
            .build()
            .unwrap_err();
        assert_eq!(err, GraphError::OverlappingRoles("a".into()));
    }

    #[test]
    fn undeclared_label_without_auto_register() {
        let err = GraphBuilder::new()
            .users(["u"])
            .items(["v"])
            .auto_register(false)
            .triple("v", "genre", "g")
            .build()
            .unwrap_err();
        assert_eq!(err, GraphError::UnknownLabel("g".into()));
    }

    #[test]
    fn ids_are_dense_users_then_items() {
        let g = small();
        assert_eq!(g.entity_id("u1"), Some(EntityId(0)));
        assert_eq!(g.entity_id("wicked"), Some(EntityId(1)));
        assert_eq!(g.entity_id("dune"), Some(EntityId(2)));
        assert_eq!(g.entity_id("fantasy"), Some(EntityId(3)));
        assert_eq!(g.entity_id("scifi"), Some(EntityId(4)));
        assert_eq!(g.role(EntityId(3)), Role::Auxiliary);
    }

    #[test]
    fn neighbors_in_insertion_order() {
        let g = GraphBuilder::new()
            .users(["u"])
            .items(["v"])
            .triple("u", INTERACT, "v")
            .triple("v", "author", "a")
            .triple("v", "genre", "g")
            .triple("lonely", "x", "lonely")
            .build()
            .unwrap();
        let v = g.entity_id("v").unwrap();
        let n = g.neighbors(v).unwrap();
        let labels: Vec<_> = n
            .iter()
            .map(|&(r, t)| (g.relation_label(r), g.entity_label(t)))
            .collect();
        assert_eq!(
            labels,
            vec![("author", "a"), ("genre", "g"), ("interact_inverse", "u")]
        );
        assert_eq!(g.stats().self_loops, 1);
        // the self loop is stored once and not reversed
        assert_eq!(g.triples().len(), 4 + 3);
    }

    #[test]
    fn isolated_entity_has_no_neighbors() {
        let g = GraphBuilder::new()
            .users(["u", "lonely"])
            .items(["v"])
            .triple("u", INTERACT, "v")
            .build()
            .unwrap();
        assert!(g
            .neighbors(g.entity_id("lonely").unwrap())
            .unwrap()
            .is_empty());
        assert_eq!(
            g.neighbors(EntityId(99)).unwrap_err(),
            GraphError::InvalidEntity(99)
        );
    }

    #[test]
    fn roles_inferred_from_interactions() {
        let g = GraphBuilder::new()
            .triple("u", INTERACT, "v")
            .triple("v", "genre", "g")
            .build()
            .unwrap();
        assert_eq!(g.users(), &[EntityId(0)]);
        assert_eq!(g.items(), &[EntityId(1)]);
    }

    #[test]
    fn interaction_must_link_user_to_item() {
        let err = GraphBuilder::new()
            .users(["u"])
            .items(["v"])
            .triple("v", INTERACT, "u")
            .build()
            .unwrap_err();
        assert!(matches!(err, GraphError::InvalidInteraction { .. }));
    }

    #[test]
    fn with_interactions_keeps_ids() {
        let g = small();
        let u = g.entity_id("u1").unwrap();
        let dune = g.entity_id("dune").unwrap();
        let h = g.with_interactions(&[(u, dune)]);
        assert_eq!(h.num_entities(), g.num_entities());
        assert_eq!(h.interactions(), vec![(u, dune)]);
        assert_eq!(h.entity_label(dune), "dune");
        assert_eq!(h.triples().len(), 6);
    }
}
