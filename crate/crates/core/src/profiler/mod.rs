//! Entity profiling.
//!
//! Profiles are produced bottom-up: items first (from rendered facts and
//! reviews), then auxiliary entities (from the profiles of linked items),
//! then users (from the profiles of interacted items and their reviews).
//! Each stage is a barrier. In template mode the profile is the prompt's
//! source text verbatim; in LLM mode the prompt is sent to a chat-completion
//! endpoint and the completion becomes the profile.

mod llm;
mod prompt;
mod templates;

pub use llm::{llm_complete, CompletionClient, HttpCompletionClient, LlmClientConfig, LlmError};
pub use prompt::{
    build_prompt, PartKind, ProfileContext, PromptBundle, PromptLimits, PromptPart, Review,
    ReviewIndex,
};
pub use templates::{render_template, Hop, Instructions, RelationTemplates, TemplateSet};

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::graph::Role as ProfileKind;
use crate::graph::{EntityId, KnowledgeGraph};

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("template is missing a label for {0}")]
    MissingLabel(&'static str),
    #[error("invalid templates: {0}")]
    Templates(String),
    #[error("profile of `{dependency}` is required before profiling `{target}`")]
    MissingDependencyProfile { target: String, dependency: String },
    #[error("llm mode requires a client configuration")]
    ConfigMissing,
    #[error("{failed} of {attempted} llm requests failed, above the allowed rate {max_rate}")]
    TooManyFailures {
        failed: usize,
        attempted: usize,
        max_rate: f64,
    },
    #[error("profile store: {0}")]
    Store(String),
    #[error("graph: {0}")]
    Graph(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Template,
    Llm,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Profile {
    pub entity: EntityId,
    pub kind: ProfileKind,
    pub text: String,
    pub provenance: Provenance,
    pub model: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ProfileRecord {
    entity_label: String,
    kind: ProfileKind,
    provenance: Provenance,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<String>,
}

/// Profiles indexed by entity, remembering the order they were produced in.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProfileStore {
    profiles: Vec<Option<Profile>>,
    order: Vec<EntityId>,
}

impl ProfileStore {
    pub fn new(num_entities: usize) -> Self {
        Self {
            profiles: vec![None; num_entities],
            order: Vec::new(),
        }
    }

    pub fn get(&self, e: EntityId) -> Option<&Profile> {
        self.profiles.get(e.index()).and_then(Option::as_ref)
    }

    /// Inserts or replaces a profile. Empty texts are rejected.
    pub fn insert(&mut self, profile: Profile) -> Result<(), ProfileError> {
        if profile.text.trim().is_empty() {
            return Err(ProfileError::Store(format!(
                "empty profile text for {}",
                profile.entity
            )));
        }
        let slot = self
            .profiles
            .get_mut(profile.entity.index())
            .ok_or_else(|| {
                ProfileError::Store(format!("entity {} out of range", profile.entity))
            })?;
        if slot.is_none() {
            self.order.push(profile.entity);
        }
        *slot = Some(profile);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn num_entities(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_complete(&self) -> bool {
        self.order.len() == self.profiles.len()
    }

    /// Position of `e` in generation order.
    pub fn generation_index(&self, e: EntityId) -> Option<usize> {
        self.order.iter().position(|&x| x == e)
    }

    /// Profiles in generation order.
    pub fn iter(&self) -> impl Iterator<Item = &Profile> {
        self.order.iter().filter_map(|&e| self.get(e))
    }

    /// Profile texts in entity-id order; `None` for missing profiles.
    pub fn texts(&self) -> Vec<Option<&str>> {
        self.profiles
            .iter()
            .map(|p| p.as_ref().map(|p| p.text.as_str()))
            .collect()
    }

    fn record(g: &KnowledgeGraph, p: &Profile) -> String {
        serde_json::to_string(&ProfileRecord {
            entity_label: g.entity_label(p.entity).to_owned(),
            kind: p.kind,
            provenance: p.provenance,
            text: p.text.clone(),
            model: p.model.clone(),
        })
        .expect("profile record serializes")
    }

    /// Line-delimited JSON, one record per profile in generation order.
    pub fn write_jsonl(&self, g: &KnowledgeGraph, out: &mut impl Write) -> std::io::Result<()> {
        for p in self.iter() {
            writeln!(out, "{}", Self::record(g, p))?;
        }
        Ok(())
    }

    pub fn save(&self, g: &KnowledgeGraph, path: &Path) -> Result<(), ProfileError> {
        let file =
            File::create(path).map_err(|e| ProfileError::Io(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(g, &mut w)
            .and_then(|_| w.flush())
            .map_err(|e| ProfileError::Io(format!("{}: {e}", path.display())))
    }

    /// Reads a store written by [`save`](Self::save). Records for unknown
    /// labels are rejected, as are kinds that contradict the graph's roles.
    pub fn load(g: &KnowledgeGraph, path: &Path) -> Result<Self, ProfileError> {
        let file =
            File::open(path).map_err(|e| ProfileError::Io(format!("{}: {e}", path.display())))?;
        let mut store = Self::new(g.num_entities());
        store.merge_jsonl(g, BufReader::new(file), path)?;
        Ok(store)
    }

    fn merge_jsonl(
        &mut self,
        g: &KnowledgeGraph,
        reader: impl BufRead,
        path: &Path,
    ) -> Result<(), ProfileError> {
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| ProfileError::Io(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ProfileRecord = serde_json::from_str(&line)
                .map_err(|e| ProfileError::Store(format!("{}:{}: {e}", path.display(), i + 1)))?;
            let entity = g.entity_id(&rec.entity_label).ok_or_else(|| {
                ProfileError::Store(format!(
                    "{}:{}: unknown entity `{}`",
                    path.display(),
                    i + 1,
                    rec.entity_label
                ))
            })?;
            if g.role(entity) != rec.kind {
                return Err(ProfileError::Store(format!(
                    "{}:{}: `{}` is a {}, not a {}",
                    path.display(),
                    i + 1,
                    rec.entity_label,
                    g.role(entity).as_str(),
                    rec.kind.as_str()
                )));
            }
            self.insert(Profile {
                entity,
                kind: rec.kind,
                text: rec.text,
                provenance: rec.provenance,
                model: rec.model,
            })?;
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ProfileMode {
    Template,
    Llm,
}

#[derive(Clone, Debug)]
pub struct ProfilingOptions {
    pub mode: ProfileMode,
    pub limits: PromptLimits,
    pub seed: u64,
    /// Append-only progress file; entities already present are skipped.
    pub checkpoint: Option<PathBuf>,
    /// Fraction of failed LLM requests above which generation aborts.
    pub max_failure_rate: f64,
}

impl Default for ProfilingOptions {
    fn default() -> Self {
        Self {
            mode: ProfileMode::Template,
            limits: PromptLimits::default(),
            seed: 0,
            checkpoint: None,
            max_failure_rate: 0.2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProfilingOutcome {
    pub store: ProfileStore,
    /// Entities whose LLM request failed and fell back to template text.
    pub failures: Vec<(EntityId, String)>,
    pub network_calls: usize,
}

/// Generates a profile for every entity, stage by stage.
pub fn generate_all_profiles(
    g: &KnowledgeGraph,
    templates: &TemplateSet,
    reviews: &[Review],
    options: &ProfilingOptions,
    client: Option<&dyn CompletionClient>,
) -> Result<ProfilingOutcome, ProfileError> {
    let client = match (options.mode, client) {
        (ProfileMode::Llm, None) => return Err(ProfileError::ConfigMissing),
        (ProfileMode::Llm, Some(c)) => Some(c),
        (ProfileMode::Template, _) => None,
    };
    let ctx = ProfileContext::new(g);
    let reviews = ReviewIndex::new(g, reviews);
    let mut store = ProfileStore::new(g.num_entities());

    let checkpoint = match &options.checkpoint {
        Some(path) => {
            if path.exists() {
                let file = File::open(path)
                    .map_err(|e| ProfileError::Io(format!("{}: {e}", path.display())))?;
                store.merge_jsonl(g, BufReader::new(file), path)?;
            }
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| ProfileError::Io(format!("{}: {e}", path.display())))?;
            Some(Mutex::new(BufWriter::new(file)))
        }
        None => None,
    };

    let stages = [
        (ProfileKind::Item, g.items().to_vec()),
        (ProfileKind::Auxiliary, g.auxiliaries()),
        (ProfileKind::User, g.users().to_vec()),
    ];
    let mut failures = Vec::new();
    let mut calls = 0usize;
    for (kind, members) in stages {
        let pending: Vec<EntityId> = members
            .into_iter()
            .filter(|&e| store.get(e).is_none())
            .collect();
        let bundles: Vec<PromptBundle> = pending
            .par_iter()
            .map(|&e| {
                ctx.build_prompt(
                    kind,
                    e,
                    templates,
                    &store,
                    &reviews,
                    &options.limits,
                    options.seed,
                )
            })
            .collect::<Result<_, _>>()?;

        let produce = |(&e, bundle): (&EntityId, &PromptBundle)| -> Result<(Profile, Option<String>), ProfileError> {
            let (profile, failure) = match client {
                None => (template_profile(e, kind, bundle), None),
                Some(c) => match c.complete(bundle) {
                    Ok(text) => (
                        Profile { entity: e, kind, text, provenance: Provenance::Llm, model: Some(c.model_name().to_owned()) },
                        None,
                    ),
                    Err(err) => {
                        log::warn!("profile request for `{}` failed: {err}", g.entity_label(e));
                        (template_profile(e, kind, bundle), Some(err.to_string()))
                    }
                },
            };
            if let Some(ck) = &checkpoint {
                let mut w = ck.lock().expect("checkpoint lock");
                writeln!(w, "{}", ProfileStore::record(g, &profile))
                    .and_then(|_| w.flush())
                    .map_err(|e| ProfileError::Io(e.to_string()))?;
            }
            Ok((profile, failure))
        };

        let results: Vec<(Profile, Option<String>)> = match client {
            None => pending
                .iter()
                .zip(&bundles)
                .map(produce)
                .collect::<Result<_, _>>()?,
            Some(c) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(c.max_parallel().max(1))
                    .build()
                    .map_err(|e| ProfileError::Io(e.to_string()))?;
                calls += pending.len();
                pool.install(|| {
                    pending
                        .par_iter()
                        .zip(bundles.par_iter())
                        .map(produce)
                        .collect::<Result<_, _>>()
                })?
            }
        };
        for (profile, failure) in results {
            if let Some(msg) = failure {
                failures.push((profile.entity, msg));
            }
            store.insert(profile)?;
        }
        if calls > 0 && failures.len() as f64 / calls as f64 > options.max_failure_rate {
            return Err(ProfileError::TooManyFailures {
                failed: failures.len(),
                attempted: calls,
                max_rate: options.max_failure_rate,
            });
        }
    }
    Ok(ProfilingOutcome {
        store,
        failures,
        network_calls: calls,
    })
}

fn template_profile(entity: EntityId, kind: ProfileKind, bundle: &PromptBundle) -> Profile {
    Profile {
        entity,
        kind,
        text: bundle.template_text(),
        provenance: Provenance::Template,
        model: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, INTERACT};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn books() -> KnowledgeGraph {
        GraphBuilder::new()
            .users(["alice", "bob"])
            .items(["Wicked", "Dune", "Emma"])
            .triple("alice", INTERACT, "Wicked")
            .triple("alice", INTERACT, "Dune")
            .triple("bob", INTERACT, "Emma")
            .triple("Wicked", "literaryGenre", "Fantasy")
            .triple("Dune", "literaryGenre", "Fantasy")
            .triple("Emma", "author", "Austen")
            .triple("Dune", "author", "Herbert")
            .build()
            .unwrap()
    }

    fn reviews() -> Vec<Review> {
        let r = |u: &str, v: &str, t: &str| Review {
            user_label: u.into(),
            item_label: v.into(),
            text: t.into(),
        };
        vec![
            r("alice", "Wicked", "Loved the witches."),
            r("alice", "Dune", "Sand everywhere."),
            r("bob", "Emma", "Witty."),
            r("bob", "Dune", "not an interaction, ignored"),
        ]
    }

    #[test]
    fn template_mode_profiles_everything_offline() {
        let g = books();
        let out = generate_all_profiles(
            &g,
            &TemplateSet::default(),
            &reviews(),
            &ProfilingOptions::default(),
            None,
        )
        .unwrap();
        assert_eq!(out.network_calls, 0);
        assert!(out.store.is_complete());
        assert!(out
            .store
            .iter()
            .all(|p| p.provenance == Provenance::Template));
        let wicked = out.store.get(g.entity_id("Wicked").unwrap()).unwrap();
        assert_eq!(
            wicked.text,
            "Wicked belongs to the literary genre Fantasy. \
             The literary genre 'Fantasy' also includes items such as Dune. Loved the witches."
        );
        assert!(!out
            .store
            .iter()
            .any(|p| p.text.contains("[ITEM]") || p.text.contains("[ENTITY]")));
        assert!(!out
            .store
            .iter()
            .any(|p| p.text.contains("not an interaction")));
    }

    #[test]
    fn generation_order_is_bottom_up() {
        let g = books();
        let out = generate_all_profiles(
            &g,
            &TemplateSet::default(),
            &reviews(),
            &ProfilingOptions::default(),
            None,
        )
        .unwrap();
        let idx = |e: EntityId| out.store.generation_index(e).unwrap();
        let max_item = g.items().iter().map(|&e| idx(e)).max().unwrap();
        let aux = g.auxiliaries();
        let (min_aux, max_aux) = (
            aux.iter().map(|&e| idx(e)).min().unwrap(),
            aux.iter().map(|&e| idx(e)).max().unwrap(),
        );
        let min_user = g.users().iter().map(|&e| idx(e)).min().unwrap();
        assert!(max_item < min_aux && max_aux < min_user);
    }

    #[test]
    fn template_mode_is_deterministic() {
        let g = books();
        let opts = ProfilingOptions {
            seed: 11,
            ..Default::default()
        };
        let a =
            generate_all_profiles(&g, &TemplateSet::default(), &reviews(), &opts, None).unwrap();
        let b =
            generate_all_profiles(&g, &TemplateSet::default(), &reviews(), &opts, None).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.store.write_jsonl(&g, &mut x).unwrap();
        b.store.write_jsonl(&g, &mut y).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn llm_mode_without_client() {
        let g = books();
        let opts = ProfilingOptions {
            mode: ProfileMode::Llm,
            ..Default::default()
        };
        let err = generate_all_profiles(&g, &TemplateSet::default(), &[], &opts, None).unwrap_err();
        assert_eq!(err, ProfileError::ConfigMissing);
    }

    struct Echo {
        calls: AtomicUsize,
        fail_on: Option<&'static str>,
    }

    impl CompletionClient for Echo {
        fn complete(&self, bundle: &PromptBundle) -> Result<String, LlmError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if let Some(needle) = self.fail_on {
                if bundle.user_message.contains(needle) {
                    return Err(LlmError::EmptyCompletion);
                }
            }
            Ok(format!("summary of {} parts", bundle.parts.len()))
        }

        fn model_name(&self) -> &str {
            "echo"
        }

        fn max_parallel(&self) -> usize {
            2
        }
    }

    #[test]
    fn llm_mode_uses_client_and_degrades_per_entity() {
        let g = books();
        let client = Echo {
            calls: AtomicUsize::new(0),
            fail_on: Some("Witty."),
        };
        let opts = ProfilingOptions {
            mode: ProfileMode::Llm,
            max_failure_rate: 0.5,
            ..Default::default()
        };
        let out = generate_all_profiles(
            &g,
            &TemplateSet::default(),
            &reviews(),
            &opts,
            Some(&client),
        )
        .unwrap();
        assert_eq!(out.network_calls, g.num_entities());
        assert_eq!(client.calls.load(Ordering::SeqCst), g.num_entities());
        // Emma's review reaches Emma, Austen (via Emma's profile) and bob.
        assert_eq!(out.failures.len(), 3);
        let emma = out.store.get(g.entity_id("Emma").unwrap()).unwrap();
        assert_eq!(emma.provenance, Provenance::Template);
        let dune = out.store.get(g.entity_id("Dune").unwrap()).unwrap();
        assert_eq!(dune.provenance, Provenance::Llm);
        assert_eq!(dune.model.as_deref(), Some("echo"));
    }

    #[test]
    fn too_many_failures_abort() {
        let g = books();
        let client = Echo {
            calls: AtomicUsize::new(0),
            fail_on: Some(""),
        };
        let opts = ProfilingOptions {
            mode: ProfileMode::Llm,
            ..Default::default()
        };
        let err = generate_all_profiles(
            &g,
            &TemplateSet::default(),
            &reviews(),
            &opts,
            Some(&client),
        )
        .unwrap_err();
        assert!(matches!(err, ProfileError::TooManyFailures { .. }));
    }

    #[test]
    fn checkpoint_resume_skips_completed_entities() {
        let g = books();
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("progress.jsonl");
        let opts = ProfilingOptions {
            mode: ProfileMode::Llm,
            checkpoint: Some(ck.clone()),
            ..Default::default()
        };
        let first = Echo {
            calls: AtomicUsize::new(0),
            fail_on: None,
        };
        generate_all_profiles(&g, &TemplateSet::default(), &reviews(), &opts, Some(&first))
            .unwrap();
        let second = Echo {
            calls: AtomicUsize::new(0),
            fail_on: None,
        };
        let out = generate_all_profiles(
            &g,
            &TemplateSet::default(),
            &reviews(),
            &opts,
            Some(&second),
        )
        .unwrap();
        assert_eq!(second.calls.load(Ordering::SeqCst), 0);
        assert!(out.store.is_complete());
    }

    #[test]
    fn item_prompt_caps_reviews() {
        let g = GraphBuilder::new()
            .users((0..5).map(|u| format!("u{u}")))
            .items(["v"])
            .triples((0..5).map(|u| crate::graph::RawTriple::new(format!("u{u}"), INTERACT, "v")))
            .build()
            .unwrap();
        let reviews: Vec<Review> = (0..5)
            .map(|u| Review {
                user_label: format!("u{u}"),
                item_label: "v".into(),
                text: format!("review {u}"),
            })
            .collect();
        let index = ReviewIndex::new(&g, &reviews);
        let limits = PromptLimits {
            max_reviews: 2,
            ..Default::default()
        };
        let store = ProfileStore::new(g.num_entities());
        let v = g.entity_id("v").unwrap();
        let a = build_prompt(
            ProfileKind::Item,
            v,
            &g,
            &TemplateSet::default(),
            &store,
            &index,
            &limits,
            3,
        )
        .unwrap();
        let b = build_prompt(
            ProfileKind::Item,
            v,
            &g,
            &TemplateSet::default(),
            &store,
            &index,
            &limits,
            3,
        )
        .unwrap();
        let picked: Vec<_> = a
            .parts
            .iter()
            .filter(|p| p.kind == PartKind::Review)
            .collect();
        assert_eq!(picked.len(), 2);
        assert_ne!(picked[0].text, picked[1].text);
        assert_eq!(a, b);
    }

    #[test]
    fn auxiliary_prompt_caps_related_profiles() {
        let mut b = GraphBuilder::new()
            .users(["u"])
            .items((0..10).map(|v| format!("v{v}")));
        b = b.triple("u", INTERACT, "v0");
        for v in 0..10 {
            b = b.triple(&format!("v{v}"), "genre", "g");
        }
        let g = b.build().unwrap();
        let out = generate_all_profiles(
            &g,
            &TemplateSet::default(),
            &[],
            &ProfilingOptions::default(),
            None,
        )
        .unwrap();
        let limits = PromptLimits {
            max_related: 4,
            ..Default::default()
        };
        let gid = g.entity_id("g").unwrap();
        let p = build_prompt(
            ProfileKind::Auxiliary,
            gid,
            &g,
            &TemplateSet::default(),
            &out.store,
            &ReviewIndex::default(),
            &limits,
            1,
        )
        .unwrap();
        let related: Vec<_> = p
            .parts
            .iter()
            .filter(|p| p.kind == PartKind::RelatedProfile)
            .collect();
        assert_eq!(related.len(), 4);
        let mut sources: Vec<_> = related.iter().map(|p| p.source.unwrap()).collect();
        sources.dedup();
        assert_eq!(sources.len(), 4);
        for s in sources {
            assert!(
                out.store.generation_index(s).unwrap() < out.store.generation_index(gid).unwrap()
            );
        }
    }

    #[test]
    fn user_prompt_before_items_is_rejected() {
        let g = books();
        let store = ProfileStore::new(g.num_entities());
        let alice = g.entity_id("alice").unwrap();
        let err = build_prompt(
            ProfileKind::User,
            alice,
            &g,
            &TemplateSet::default(),
            &store,
            &ReviewIndex::default(),
            &PromptLimits::default(),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, ProfileError::MissingDependencyProfile { .. }));
    }

    #[test]
    fn store_roundtrip_and_role_check() {
        let g = books();
        let out = generate_all_profiles(
            &g,
            &TemplateSet::default(),
            &reviews(),
            &ProfilingOptions::default(),
            None,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profiles.jsonl");
        out.store.save(&g, &path).unwrap();
        assert_eq!(ProfileStore::load(&g, &path).unwrap(), out.store);

        std::fs::write(
            &path,
            r#"{"entity_label":"alice","kind":"item","provenance":"template","text":"x"}"#,
        )
        .unwrap();
        assert!(matches!(
            ProfileStore::load(&g, &path),
            Err(ProfileError::Store(_))
        ));
    }
}
