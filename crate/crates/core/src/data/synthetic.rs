//! Planted-preference synthetic datasets.
//!
//! Every user and item gets a genre. Items are linked to their genre by
//! `genre` triples, interactions are drawn in-genre with a configurable
//! probability, and each interaction carries a short review naming the
//! item's genre, so both the graph and the profile text carry the signal.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ingest::DatasetManifest;
use super::DataError;
use crate::graph::{GraphBuilder, KnowledgeGraph, RawTriple, INTERACT};
use crate::profiler::Review;
use crate::seed::stage_rng;

const GENRES: [&str; 12] = [
    "fantasy",
    "mystery",
    "romance",
    "horror",
    "scifi",
    "history",
    "poetry",
    "comedy",
    "thriller",
    "western",
    "biography",
    "travel",
];

const REVIEW_PHRASES: [&str; 6] = [
    "A gripping {genre} story.",
    "Solid {genre} writing throughout.",
    "Exactly the kind of {genre} I enjoy.",
    "Not the best {genre} I have read.",
    "The {genre} elements carry it.",
    "Recommended to any {genre} fan.",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_genres: usize,
    pub interactions_per_user: usize,
    pub in_genre_probability: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_items: 100,
            n_genres: 5,
            interactions_per_user: 20,
            in_genre_probability: 0.9,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::SpecInvalid(m));
        if self.n_users == 0 || self.n_items == 0 || self.n_genres == 0 {
            return bad("users, items and genres must be positive".into());
        }
        if self.n_genres > self.n_items {
            return bad(format!(
                "{} genres exceed {} items",
                self.n_genres, self.n_items
            ));
        }
        if !(0.0..=1.0).contains(&self.in_genre_probability) {
            return bad(format!(
                "in-genre probability {} is outside [0, 1]",
                self.in_genre_probability
            ));
        }
        if self.interactions_per_user == 0 || self.interactions_per_user >= self.n_items {
            return bad(format!(
                "interactions per user must be in 1..{}",
                self.n_items
            ));
        }
        Ok(())
    }
}

pub fn genre_name(g: usize) -> String {
    match GENRES.get(g) {
        Some(name) => (*name).to_owned(),
        None => format!("genre{g:02}"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub user_genre: Vec<usize>,
    pub item_genre: Vec<usize>,
    pub kg_triples: Vec<RawTriple>,
    /// `(user index, item index)` in generation order.
    pub interactions: Vec<(usize, usize)>,
    pub reviews: Vec<Review>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, DataError> {
    spec.validate()?;
    let mut rng = stage_rng(spec.seed, "synthetic", 0);
    let users: Vec<String> = (0..spec.n_users).map(|u| format!("user{u:04}")).collect();
    let items: Vec<String> = (0..spec.n_items).map(|i| format!("item{i:04}")).collect();
    let item_genre: Vec<usize> = (0..spec.n_items).map(|i| i % spec.n_genres).collect();
    let user_genre: Vec<usize> = (0..spec.n_users)
        .map(|_| rng.random_range(0..spec.n_genres))
        .collect();
    let kg_triples = items
        .iter()
        .zip(&item_genre)
        .map(|(i, g)| RawTriple::new(i.as_str(), "genre", genre_name(*g)))
        .collect();

    let mut interactions = Vec::with_capacity(spec.n_users * spec.interactions_per_user);
    let mut reviews = Vec::with_capacity(interactions.capacity());
    for u in 0..spec.n_users {
        let (mut inside, mut outside): (Vec<usize>, Vec<usize>) =
            (0..spec.n_items).partition(|&i| item_genre[i] == user_genre[u]);
        for _ in 0..spec.interactions_per_user {
            let want_inside = rng.random_bool(spec.in_genre_probability);
            let pool = match (want_inside, inside.is_empty(), outside.is_empty()) {
                (true, false, _) | (false, _, true) => &mut inside,
                _ => &mut outside,
            };
            let item = pool.swap_remove(rng.random_range(0..pool.len()));
            interactions.push((u, item));
            let phrase = REVIEW_PHRASES
                .choose(&mut rng)
                .expect("phrases are non-empty");
            reviews.push(Review {
                user_label: users[u].clone(),
                item_label: items[item].clone(),
                text: phrase.replace("{genre}", &genre_name(item_genre[item])),
            });
        }
    }
    Ok(SyntheticData {
        spec: spec.clone(),
        users,
        items,
        user_genre,
        item_genre,
        kg_triples,
        interactions,
        reviews,
    })
}

impl SyntheticData {
    pub fn graph(&self) -> Result<KnowledgeGraph, DataError> {
        let mut triples: Vec<RawTriple> = self
            .interactions
            .iter()
            .map(|&(u, i)| RawTriple::new(self.users[u].as_str(), INTERACT, self.items[i].as_str()))
            .collect();
        triples.extend(self.kg_triples.iter().cloned());
        Ok(GraphBuilder::new()
            .users(self.users.clone())
            .items(self.items.clone())
            .triples(triples)
            .build()?)
    }

    /// Fraction of interactions whose item shares the user's genre.
    pub fn in_genre_fraction(&self) -> f64 {
        let hits = self
            .interactions
            .iter()
            .filter(|&&(u, i)| self.user_genre[u] == self.item_genre[i])
            .count();
        hits as f64 / self.interactions.len().max(1) as f64
    }

    /// Writes `triples.tsv`, `interactions.tsv`, `roles.tsv`,
    /// `reviews.jsonl` and a checksummed `manifest.toml` into `dir`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<PathBuf, DataError> {
        fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        let mut kg = String::new();
        for t in &self.kg_triples {
            writeln!(kg, "{}\t{}\t{}", t.head, t.relation, t.tail).unwrap();
        }
        let mut inter = String::new();
        for &(u, i) in &self.interactions {
            writeln!(inter, "{}\t{}", self.users[u], self.items[i]).unwrap();
        }
        let mut roles = String::new();
        for u in &self.users {
            writeln!(roles, "{u}\tuser").unwrap();
        }
        for i in &self.items {
            writeln!(roles, "{i}\titem").unwrap();
        }
        let mut reviews = String::new();
        for r in &self.reviews {
            reviews.push_str(&serde_json::to_string(r).expect("review serializes"));
            reviews.push('\n');
        }
        for (file, body) in [
            ("triples.tsv", &kg),
            ("interactions.tsv", &inter),
            ("roles.tsv", &roles),
            ("reviews.jsonl", &reviews),
        ] {
            let p = dir.join(file);
            fs::write(&p, body).map_err(|e| DataError::io(&p, e))?;
        }
        let mut manifest = DatasetManifest {
            name: name.to_owned(),
            triples: "triples.tsv".into(),
            interactions: "interactions.tsv".into(),
            roles: Some("roles.tsv".into()),
            reviews: Some("reviews.jsonl".into()),
            templates: None,
            checksums: Default::default(),
        };
        manifest.fill_checksums(dir)?;
        let path = dir.join("manifest.toml");
        manifest.save(&path)?;
        Ok(path)
    }
}
