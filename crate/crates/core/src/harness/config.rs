//! Experiment configuration files (TOML).
//!
//! Every section is optional and falls back to documented defaults. Unknown
//! keys are rejected with the closest known key as a hint.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierConfig;
use crate::data::{validate_ratios, ResampleMethod};
use crate::error::{Error, Result};
use crate::fd::JITTER;
use crate::gan::GanConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `manifest.json` and the patch store.
    pub dataset: PathBuf,
    /// Raw patch directories (ingest only).
    pub root: Option<PathBuf>,
    pub cloudy_list: Option<PathBuf>,
    pub snow_list: Option<PathBuf>,
    /// Optional label vocabulary, one class per line; 43 land-cover classes otherwise.
    pub vocabulary: Option<PathBuf>,
    pub size: usize,
    pub resample: ResampleMethod,
    pub split_ratios: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            root: None,
            cloudy_list: None,
            snow_list: None,
            vocabulary: None,
            size: 120,
            resample: ResampleMethod::Bilinear,
            split_ratios: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Global-average-pooled output of the classifier's last residual stage.
    #[default]
    PooledPenultimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdConfig {
    /// Diagonal jitter used when a covariance cross term is not PSD.
    pub epsilon: f64,
    pub feature_source: FeatureSource,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            epsilon: JITTER,
            feature_source: FeatureSource::PooledPenultimate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream derives from it by name.
    pub seed: u64,
    pub data: DataConfig,
    pub classifier: ClassifierConfig,
    pub gan: GanConfig,
    pub fd: FdConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            data: DataConfig::default(),
            classifier: ClassifierConfig::default(),
            gan: GanConfig::default(),
            fd: FdConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, r: &str| {
            Err(Error::ValidationError {
                key: k.into(),
                reason: r.into(),
            })
        };
        if self.data.size < 8 {
            return bad("data.size", "must be at least 8");
        }
        if validate_ratios(self.data.split_ratios).is_err() {
            return bad("data.split_ratios", "must be three nonnegative fractions summing to 1");
        }
        if !(self.fd.epsilon > 0.0 && self.fd.epsilon < 1.0) {
            return bad("fd.epsilon", "must lie in (0, 1)");
        }
        self.classifier.validate()?;
        self.gan.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::ParseError(e.to_string()))
    }

    /// SHA-256 of the resolved configuration.
    pub fn hash(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

/// Parses, defaults and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let value: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::ParseError(e.message().to_string()))?;
    check_keys(&value)?;
    let cfg: ExperimentConfig = toml::Value::Table(value)
        .try_into()
        .map_err(|e: toml::de::Error| Error::ParseError(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::ParseError(m) => Error::ParseError(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// Known keys per table, taken from the serialized defaults.
fn known_keys() -> toml::Table {
    toml::Table::try_from(ExperimentConfig::default()).expect("defaults serialize")
}

fn nearest<'a>(key: &str, candidates: impl Iterator<Item = &'a String>) -> Option<&'a String> {
    candidates
        .map(|c| (strsim::damerau_levenshtein(key, c), c))
        .filter(|(d, _)| *d <= 3)
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c)
}

/// Option-typed fields are absent from the serialized defaults.
const OPTIONAL_KEYS: &[&str] = &[
    "data.root",
    "data.cloudy_list",
    "data.snow_list",
    "data.vocabulary",
    "classifier.max_train_patches",
    "gan.lr_decay_start",
    "gan.ema_decay",
    "gan.crop",
    "gan.steps_per_epoch",
    "gan.val_max",
];

fn check_table(given: &toml::Table, known: &toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in given {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match known.get(k) {
            Some(toml::Value::Table(sub)) => {
                if let toml::Value::Table(g) = v {
                    check_table(g, sub, &path)?;
                }
            }
            Some(_) => {}
            None if OPTIONAL_KEYS.contains(&path.as_str()) => {}
            None => {
                let optional = OPTIONAL_KEYS
                    .iter()
                    .filter_map(|o| o.strip_prefix(&format!("{prefix}.")).or(prefix.is_empty().then_some(o)))
                    .map(String::from)
                    .collect::<Vec<_>>();
                let hint = nearest(k, known.keys().chain(optional.iter()))
                    .map(|c| format!("; did you mean `{c}`?"))
                    .unwrap_or_default();
                return Err(Error::ValidationError {
                    key: path,
                    reason: format!("unknown key{hint}"),
                });
            }
        }
    }
    Ok(())
}

fn check_keys(given: &toml::Table) -> Result<()> {
    check_table(given, &known_keys(), "")
}
