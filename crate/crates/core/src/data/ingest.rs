use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DataError;
use crate::graph::{GraphBuilder, KnowledgeGraph, RawTriple, INTERACT};
use crate::profiler::{Review, TemplateSet};

/// Dataset description, stored as TOML. Paths are relative to the manifest.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    /// `head<TAB>relation<TAB>tail` knowledge triples.
    pub triples: PathBuf,
    /// `user<TAB>item` interaction pairs.
    pub interactions: PathBuf,
    /// Optional `label<TAB>user|item` lines declaring entities without interactions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roles: Option<PathBuf>,
    /// Optional JSON lines `{"user_label", "item_label", "text"}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviews: Option<PathBuf>,
    /// Optional relation template file; built-in templates otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    /// SHA-256 per file key (`triples`, `interactions`, ...), checked when present.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub checksums: BTreeMap<String, String>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        toml::from_str(&text).map_err(|e| DataError::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let text = toml::to_string(self).map_err(|e| DataError::Manifest(e.to_string()))?;
        fs::write(path, text).map_err(|e| DataError::io(path, e))
    }

    /// `(key, path)` for every referenced file.
    pub fn files(&self) -> Vec<(&'static str, &Path)> {
        let mut v = vec![
            ("triples", self.triples.as_path()),
            ("interactions", self.interactions.as_path()),
        ];
        for (k, p) in [
            ("roles", &self.roles),
            ("reviews", &self.reviews),
            ("templates", &self.templates),
        ] {
            if let Some(p) = p {
                v.push((k, p.as_path()));
            }
        }
        v
    }

    /// Verifies existence of every file and every recorded checksum.
    pub fn verify(&self, base: &Path) -> Result<(), DataError> {
        for (key, rel) in self.files() {
            let path = base.join(rel);
            if !path.is_file() {
                return Err(DataError::MissingFile(path));
            }
            if let Some(expected) = self.checksums.get(key) {
                let actual = sha256_file(&path)?;
                if !actual.eq_ignore_ascii_case(expected) {
                    return Err(DataError::ChecksumMismatch {
                        file: path,
                        expected: expected.clone(),
                        actual,
                    });
                }
            }
        }
        Ok(())
    }

    /// Records the checksum of every referenced file.
    pub fn fill_checksums(&mut self, base: &Path) -> Result<(), DataError> {
        let mut sums = BTreeMap::new();
        for (key, rel) in self.files() {
            sums.insert(key.to_owned(), sha256_file(&base.join(rel))?);
        }
        self.checksums = sums;
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn data_lines(path: &Path) -> Result<Vec<(usize, String)>, DataError> {
    let f = fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((i + 1, trimmed.to_owned()));
    }
    Ok(out)
}

fn fields<'a>(
    path: &Path,
    line_no: usize,
    line: &'a str,
    n: usize,
) -> Result<Vec<&'a str>, DataError> {
    let parts: Vec<&str> = line.split('\t').map(str::trim).collect();
    if parts.len() != n || parts.iter().any(|p| p.is_empty()) {
        return Err(DataError::Parse {
            file: path.to_owned(),
            line: line_no,
            message: format!("expected {n} tab-separated fields, found {}", parts.len()),
        });
    }
    Ok(parts)
}

pub fn parse_triples(path: &Path) -> Result<Vec<RawTriple>, DataError> {
    data_lines(path)?
        .into_iter()
        .map(|(n, l)| {
            let f = fields(path, n, &l, 3)?;
            Ok(RawTriple::new(f[0], f[1], f[2]))
        })
        .collect()
}

pub fn parse_interactions(path: &Path) -> Result<Vec<(String, String)>, DataError> {
    data_lines(path)?
        .into_iter()
        .map(|(n, l)| {
            let f = fields(path, n, &l, 2)?;
            Ok((f[0].to_owned(), f[1].to_owned()))
        })
        .collect()
}

/// Declared users and items, in file order.
pub fn parse_roles(path: &Path) -> Result<(Vec<String>, Vec<String>), DataError> {
    let (mut users, mut items) = (Vec::new(), Vec::new());
    for (n, l) in data_lines(path)? {
        let f = fields(path, n, &l, 2)?;
        match f[1] {
            "user" => users.push(f[0].to_owned()),
            "item" => items.push(f[0].to_owned()),
            other => {
                return Err(DataError::Parse {
                    file: path.to_owned(),
                    line: n,
                    message: format!("unknown role `{other}`"),
                })
            }
        }
    }
    Ok((users, items))
}

pub fn read_reviews(path: &Path) -> Result<Vec<Review>, DataError> {
    data_lines(path)?
        .into_iter()
        .map(|(n, l)| {
            serde_json::from_str(&l).map_err(|e| DataError::Parse {
                file: path.to_owned(),
                line: n,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Keeps only interactions whose user and item both have at least `k`
/// interactions, repeating until stable.
pub fn k_core(pairs: &[(String, String)], k: usize) -> Vec<(String, String)> {
    let mut kept: Vec<(String, String)> = pairs.to_vec();
    loop {
        let mut deg: HashMap<&str, usize> = HashMap::new();
        for (u, v) in &kept {
            *deg.entry(u).or_default() += 1;
            *deg.entry(v).or_default() += 1;
        }
        let next: Vec<(String, String)> = kept
            .iter()
            .filter(|(u, v)| deg[u.as_str()] >= k && deg[v.as_str()] >= k)
            .cloned()
            .collect();
        if next.len() == kept.len() {
            return next;
        }
        kept = next;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestOptions {
    pub k_core: Option<usize>,
}

pub struct Dataset {
    pub name: String,
    pub graph: KnowledgeGraph,
    pub reviews: Vec<Review>,
    pub templates: TemplateSet,
}

/// Loads a dataset from its manifest: verifies files and checksums, parses
/// every file, and builds the graph with dense ids.
pub fn ingest(manifest_path: &Path, opts: &IngestOptions) -> Result<Dataset, DataError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    manifest.verify(base)?;
    let mut pairs = parse_interactions(&base.join(&manifest.interactions))?;
    if let Some(k) = opts.k_core {
        pairs = k_core(&pairs, k);
    }
    let triples = parse_triples(&base.join(&manifest.triples))?;
    let (mut users, mut items) = match &manifest.roles {
        Some(p) => parse_roles(&base.join(p))?,
        None => (Vec::new(), Vec::new()),
    };
    let (mut seen_u, mut seen_i): (HashSet<String>, HashSet<String>) = (
        users.iter().cloned().collect(),
        items.iter().cloned().collect(),
    );
    for (u, v) in &pairs {
        if seen_u.insert(u.clone()) {
            users.push(u.clone());
        }
        if seen_i.insert(v.clone()) {
            items.push(v.clone());
        }
    }
    if opts.k_core.is_some() {
        let active: HashSet<&str> = pairs.iter().map(|(u, _)| u.as_str()).collect();
        users.retain(|u| active.contains(u.as_str()));
    }
    let mut all = Vec::with_capacity(pairs.len() + triples.len());
    all.extend(
        pairs
            .iter()
            .map(|(u, v)| RawTriple::new(u.as_str(), INTERACT, v.as_str())),
    );
    all.extend(triples.into_iter().filter(|t| t.relation != INTERACT));
    let graph = GraphBuilder::new()
        .users(users)
        .items(items)
        .triples(all)
        .build()?;
    let reviews = match &manifest.reviews {
        Some(p) => read_reviews(&base.join(p))?,
        None => Vec::new(),
    };
    let templates = match &manifest.templates {
        Some(p) => {
            TemplateSet::load(&base.join(p)).map_err(|e| DataError::Manifest(e.to_string()))?
        }
        None => TemplateSet::default(),
    };
    Ok(Dataset {
        name: manifest.name,
        graph,
        reviews,
        templates,
    })
}
