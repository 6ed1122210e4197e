//! Flat `key = value` configuration with `#` comments.
//!
//! Settings resolve as flag > config file > built-in default: a
//! [`FlatConfig`] read from the file is overlaid with the flag values and
//! then applied on top of [`RunConfig::default`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::encoder::{EncoderKind, EncoderSpec};
use crate::graph::SplitRatios;
use crate::model::FusionMode;
use crate::profiler::{LlmClientConfig, ProfileMode, PromptLimits};
use crate::trainer::TrainConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config not found: {0}")]
    ConfigMissing(PathBuf),
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`")]
    InvalidValue { key: String, value: String },
    #[error("cannot read config {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlatConfig {
    entries: BTreeMap<String, String>,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Parse {
                    line: i + 1,
                    message: "expected `key = value`".into(),
                });
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(ConfigError::Parse {
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            entries.insert(key.to_owned(), v.trim().to_owned());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        if !path.exists() {
            return Err(ConfigError::ConfigMissing(path.to_owned()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    /// Values in `other` replace values here.
    pub fn overlay(&mut self, other: &FlatConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::InvalidValue {
        key: key.to_owned(),
        value: value.to_owned(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(ConfigError::InvalidValue {
            key: key.to_owned(),
            value: value.to_owned(),
        }),
    }
}

/// Everything a pipeline run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Dataset manifest.
    pub dataset: Option<PathBuf>,
    /// Directory for profiles, embeddings, checkpoints and logs.
    pub work_dir: PathBuf,
    pub seed: u64,
    pub split: SplitRatios,
    pub k_core: Option<usize>,
    pub profile_mode: ProfileMode,
    pub limits: PromptLimits,
    pub max_failure_rate: f64,
    pub llm: LlmClientConfig,
    pub encoder: EncoderSpec,
    pub train: TrainConfig,
    pub mask_validation: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            work_dir: PathBuf::from("run"),
            seed: 0,
            split: SplitRatios::default(),
            k_core: None,
            profile_mode: ProfileMode::Template,
            limits: PromptLimits::default(),
            max_failure_rate: 0.2,
            llm: LlmClientConfig::default(),
            encoder: EncoderSpec::default(),
            train: TrainConfig::default(),
            mask_validation: false,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "dataset",
    "work_dir",
    "seed",
    "train_ratio",
    "validation_ratio",
    "test_ratio",
    "k_core",
    "profile_mode",
    "max_reviews",
    "max_related",
    "max_twohop_items",
    "max_failure_rate",
    "llm_endpoint",
    "llm_model",
    "llm_max_retries",
    "llm_backoff_secs",
    "llm_timeout_secs",
    "llm_max_parallel",
    "llm_api_key_env",
    "encoder",
    "encoder_file",
    "profile_dim",
    "normalize_profiles",
    "dim",
    "layers",
    "lambda_p",
    "lambda_pair",
    "pair_fraction",
    "pair_rounds",
    "learning_rate",
    "batch_size",
    "max_epochs",
    "patience",
    "weight_decay",
    "fusion",
    "frozen_attention",
    "eval_k",
    "log_wall_time",
    "mask_validation",
];

impl RunConfig {
    /// Defaults overridden by every key in `flat`. Relative paths are kept
    /// as written.
    pub fn from_flat(flat: &FlatConfig) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        let mut encoder_name = "hashed".to_owned();
        let mut encoder_file: Option<PathBuf> = None;
        for (key, value) in flat.iter() {
            let t = &mut c.train;
            match key {
                "dataset" => c.dataset = Some(PathBuf::from(value)),
                "work_dir" => c.work_dir = PathBuf::from(value),
                "seed" => c.seed = parse_value(key, value)?,
                "train_ratio" => c.split.train = parse_value(key, value)?,
                "validation_ratio" => c.split.validation = parse_value(key, value)?,
                "test_ratio" => c.split.test = parse_value(key, value)?,
                "k_core" => {
                    let k: usize = parse_value(key, value)?;
                    c.k_core = (k > 0).then_some(k);
                }
                "profile_mode" => {
                    c.profile_mode = match value {
                        "template" => ProfileMode::Template,
                        "llm" => ProfileMode::Llm,
                        _ => {
                            return Err(ConfigError::InvalidValue {
                                key: key.into(),
                                value: value.into(),
                            })
                        }
                    }
                }
                "max_reviews" => c.limits.max_reviews = parse_value(key, value)?,
                "max_related" => c.limits.max_related = parse_value(key, value)?,
                "max_twohop_items" => c.limits.max_twohop_items = parse_value(key, value)?,
                "max_failure_rate" => c.max_failure_rate = parse_value(key, value)?,
                "llm_endpoint" => c.llm.endpoint = value.to_owned(),
                "llm_model" => c.llm.model = value.to_owned(),
                "llm_max_retries" => c.llm.max_retries = parse_value(key, value)?,
                "llm_backoff_secs" => c.llm.backoff_base_secs = parse_value(key, value)?,
                "llm_timeout_secs" => c.llm.timeout_secs = parse_value(key, value)?,
                "llm_max_parallel" => c.llm.max_parallel = parse_value(key, value)?,
                "llm_api_key_env" => {
                    c.llm.api_key_env = (!value.is_empty()).then(|| value.to_owned())
                }
                "encoder" => encoder_name = value.to_owned(),
                "encoder_file" => encoder_file = Some(PathBuf::from(value)),
                "profile_dim" => c.encoder.dim = parse_value(key, value)?,
                "normalize_profiles" => c.encoder.normalize = parse_bool(key, value)?,
                "dim" => t.dim = parse_value(key, value)?,
                "layers" => t.layers = parse_value(key, value)?,
                "lambda_p" => t.lambda_p = parse_value(key, value)?,
                "lambda_pair" => t.lambda_pair = parse_value(key, value)?,
                "pair_fraction" => t.pair_fraction = parse_value(key, value)?,
                "pair_rounds" => t.pair_rounds = parse_value(key, value)?,
                "learning_rate" => t.learning_rate = parse_value(key, value)?,
                "batch_size" => t.batch_size = parse_value(key, value)?,
                "max_epochs" => t.max_epochs = parse_value(key, value)?,
                "patience" => t.patience = parse_value(key, value)?,
                "weight_decay" => t.weight_decay = parse_value(key, value)?,
                "fusion" => {
                    t.fusion =
                        value
                            .parse::<FusionMode>()
                            .map_err(|_| ConfigError::InvalidValue {
                                key: key.into(),
                                value: value.into(),
                            })?
                }
                "frozen_attention" => t.frozen_attention = parse_bool(key, value)?,
                "eval_k" => t.eval_k = parse_value(key, value)?,
                "log_wall_time" => t.log_wall_time = parse_bool(key, value)?,
                "mask_validation" => c.mask_validation = parse_bool(key, value)?,
                other => return Err(ConfigError::UnknownKey(other.to_owned())),
            }
        }
        c.train.seed = c.seed;
        c.encoder.kind = match encoder_name.as_str() {
            "hashed" => EncoderKind::HashedBagOfWords { seed: c.seed },
            "file" => EncoderKind::ExternalFile {
                path: encoder_file.ok_or_else(|| ConfigError::InvalidValue {
                    key: "encoder_file".into(),
                    value: String::new(),
                })?,
            },
            _ => {
                return Err(ConfigError::InvalidValue {
                    key: "encoder".into(),
                    value: encoder_name,
                })
            }
        };
        Ok(c)
    }

    /// Reads `path` (when given), overlays `flags`, and resolves.
    pub fn resolve(path: Option<&Path>, flags: &FlatConfig) -> Result<Self, ConfigError> {
        let mut flat = match path {
            Some(p) => FlatConfig::load(p)?,
            None => FlatConfig::default(),
        };
        flat.overlay(flags);
        Self::from_flat(&flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let c = FlatConfig::parse("# header\n\ndim = 32   # inline\nfusion=concatenate\n").unwrap();
        assert_eq!(c.get("dim"), Some("32"));
        assert_eq!(c.get("fusion"), Some("concatenate"));
        assert!(matches!(
            FlatConfig::parse("dim 32"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn precedence_flag_over_file_over_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "dim = 32\nlayers = 3\n").unwrap();
        let mut flags = FlatConfig::default();
        flags.set("layers", "1");
        let c = RunConfig::resolve(Some(&path), &flags).unwrap();
        assert_eq!(c.train.layers, 1);
        assert_eq!(c.train.dim, 32);
        assert_eq!(c.train.batch_size, 1024);
    }

    #[test]
    fn missing_file_and_bad_keys() {
        let err = RunConfig::resolve(
            Some(Path::new("/nonexistent/missing.conf")),
            &FlatConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("config not found"));
        assert_eq!(
            RunConfig::from_flat(&FlatConfig::parse("colour = red").unwrap()),
            Err(ConfigError::UnknownKey("colour".into()))
        );
        assert!(matches!(
            RunConfig::from_flat(&FlatConfig::parse("dim = many").unwrap()),
            Err(ConfigError::InvalidValue { .. })
        ));
    }

    #[test]
    fn every_listed_key_is_accepted() {
        for key in CONFIG_KEYS {
            let value = match *key {
                "profile_mode" => "template",
                "encoder" => "hashed",
                "fusion" => "add-with-inverse",
                "frozen_attention" | "log_wall_time" | "mask_validation" | "normalize_profiles" => {
                    "false"
                }
                "dataset" | "work_dir" | "encoder_file" | "llm_endpoint" | "llm_model"
                | "llm_api_key_env" => "x",
                _ => "1",
            };
            let mut flat = FlatConfig::default();
            flat.set(*key, value);
            RunConfig::from_flat(&flat).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }
}
