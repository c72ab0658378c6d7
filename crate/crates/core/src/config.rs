//! Experiment configuration: one JSON document that fixes every stage.
//!
//! Fields may be overridden with `path.to.field=value` strings, where `value` is
//! parsed as JSON and falls back to a plain string.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::ExtractorKind;
use crate::phantom::{PhantomError, PopulationSpec};
use crate::preprocess::{PreprocessError, PreprocessParams};
use crate::simulate::{SequenceParams, SimulateError, SliceOptions};
use crate::toy::{RealStyle, StyleError};
use crate::translate::{DiscriminatorSpec, GeneratorSpec, TranslateError, TranslatorConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    /// Dotted path of the offending field, e.g. `translator.tau`.
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("bad override {0:?}: expected path=value")]
    Override(String),
    #[error("{}", list(.0))]
    Invalid(Vec<ConfigIssue>),
}

fn list(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Where the real-domain images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum RealSource {
    /// A second phantom population rendered with scanner-like texture.
    Procedural {
        #[serde(default)]
        population: PopulationSpec,
        #[serde(default)]
        style: RealStyle,
    },
    /// A directory of `.s2rimg` files, preprocessed with the real-image path.
    Directory { path: PathBuf },
}

impl Default for RealSource {
    fn default() -> Self {
        RealSource::Procedural {
            population: PopulationSpec::default(),
            style: RealStyle::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub extractor: ExtractorKind,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            extractor: ExtractorKind::RandomConv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub population: PopulationSpec,
    pub sequence: SequenceParams,
    /// Per-slice tissue property perturbation, fraction in `[0, 0.3]`.
    pub variation_pct: f64,
    pub slices: SliceOptions,
    pub preprocess: PreprocessParams,
    pub real: RealSource,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub translator: TranslatorConfig,
    pub metrics: MetricsConfig,
    pub output_root: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            population: PopulationSpec::default(),
            sequence: SequenceParams::default(),
            variation_pct: 0.05,
            slices: SliceOptions::default(),
            preprocess: PreprocessParams::default(),
            real: RealSource::default(),
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
            translator: TranslatorConfig::default(),
            metrics: MetricsConfig::default(),
            output_root: PathBuf::from("runs/default"),
        }
    }
}

fn issue(prefix: &str, field: &str, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue {
        path: if field.is_empty() {
            prefix.to_string()
        } else {
            format!("{prefix}.{field}")
        },
        message: message.into(),
    }
}

fn phantom_issue(prefix: &str, e: PhantomError) -> ConfigIssue {
    match e {
        PhantomError::InvalidSpec { field, reason } => issue(prefix, field, reason),
        e => issue(prefix, "", e.to_string()),
    }
}

fn translate_issue(prefix: &str, e: TranslateError) -> ConfigIssue {
    match e {
        TranslateError::InvalidSpec { field, reason } => issue(prefix, field, reason),
        e => issue(prefix, "", e.to_string()),
    }
}

impl ExperimentConfig {
    /// Small, fast settings: 64×64 images, 64 per domain, light networks.
    pub fn toy() -> Self {
        Self {
            population: PopulationSpec {
                count: 8,
                ..PopulationSpec::default()
            },
            preprocess: PreprocessParams {
                width: 64,
                height: 64,
                ..PreprocessParams::default()
            },
            real: RealSource::Procedural {
                population: PopulationSpec {
                    count: 8,
                    ..PopulationSpec::default()
                },
                style: RealStyle::default(),
            },
            generator: GeneratorSpec::light(),
            discriminator: DiscriminatorSpec::light(),
            output_root: PathBuf::from("runs/toy"),
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `path=value` overrides in order.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        for o in overrides {
            let o = o.as_ref();
            let (path, raw) = o
                .split_once('=')
                .filter(|(p, _)| !p.is_empty())
                .ok_or_else(|| ConfigError::Override(o.to_string()))?;
            let value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, path, value).map_err(|_| ConfigError::Override(o.to_string()))?;
        }
        serde_json::from_value(doc).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Every problem found, not just the first.
    pub fn findings(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        if let Err(e) = self.population.validate() {
            out.push(phantom_issue("population", e));
        }
        if let Err(e) = self.sequence.validate() {
            out.push(match e {
                SimulateError::InvalidSequence { field, reason } => {
                    issue("sequence", field, reason)
                }
                SimulateError::InvalidNoise(_) => issue("sequence", "noise_sd", e.to_string()),
                e => issue("sequence", "", e.to_string()),
            });
        }
        if !(0.0..=0.3).contains(&self.variation_pct) {
            out.push(issue("variation_pct", "", "must lie in [0, 0.3]"));
        }
        if self.slices.n_slices == 0 {
            out.push(issue("slices", "n_slices", "must be at least 1"));
        }
        if let Err(e) = self.preprocess.validate() {
            out.push(match e {
                PreprocessError::InvalidDims(..) => issue("preprocess", "width", e.to_string()),
                e => issue("preprocess", "real_resize", e.to_string()),
            });
        }
        match &self.real {
            RealSource::Procedural { population, style } => {
                if let Err(e) = population.validate() {
                    out.push(phantom_issue("real.population", e));
                }
                if let Err(StyleError::InvalidSpec { field, reason }) = style.validate() {
                    out.push(issue("real.style", field, reason));
                }
            }
            RealSource::Directory { path } => {
                if path.as_os_str().is_empty() {
                    out.push(issue("real", "path", "must not be empty"));
                }
            }
        }
        if let Err(e) = self.generator.validate() {
            out.push(translate_issue("generator", e));
        }
        if let Err(e) = self.discriminator.validate() {
            out.push(translate_issue("discriminator", e));
        }
        if let Err(e) = self.translator.validate() {
            out.push(translate_issue("translator", e));
        }
        let extent = match self.translator.crop_size {
            0 => (self.preprocess.width, self.preprocess.height),
            c => (c, c),
        };
        let m = self
            .generator
            .stride_multiple()
            .max(1 << self.discriminator.n_layers.min(6));
        if self.translator.crop_size > self.preprocess.width.min(self.preprocess.height) {
            out.push(issue(
                "translator",
                "crop_size",
                "exceeds the preprocessed image size",
            ));
        } else if extent.0 % m != 0 || extent.1 % m != 0 {
            out.push(issue(
                "translator",
                "crop_size",
                format!("training extent {extent:?} must be a multiple of {m}"),
            ));
        }
        if self.output_root.as_os_str().is_empty() {
            out.push(issue("output_root", "", "must not be empty"));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let issues = self.findings();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(issues))
        }
    }

    /// SHA-256 of the canonical JSON form (sorted keys, `output_root` excluded).
    pub fn hash(&self) -> String {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut doc {
            m.remove("output_root");
        }
        // serde_json's default map is ordered, so this is canonical.
        let bytes = serde_json::to_vec(&doc).expect("value serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<(), ()> {
    let mut cur = doc;
    let mut parts = path.split('.').peekable();
    while let Some(key) = parts.next() {
        let obj = cur.as_object_mut().ok_or(())?;
        if parts.peek().is_none() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cur = obj.get_mut(key).ok_or(())?;
    }
    Err(())
}
