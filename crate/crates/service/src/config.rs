//! Service configuration: a TOML file, then `DERMTRIAGE_*` environment
//! overrides.
//!
//! | key | env | default |
//! |---|---|---|
//! | `storage_dir` | `DERMTRIAGE_STORAGE_DIR` | `dermtriage-data` |
//! | `bind` | `DERMTRIAGE_BIND` | `127.0.0.1:8080` |
//! | `taxonomy` | `DERMTRIAGE_TAXONOMY` | `dermatology_seven` |
//! | `crop_fraction` | `DERMTRIAGE_CROP_FRACTION` | `1.0` |
//! | `roi_padding` | `DERMTRIAGE_ROI_PADDING` | `1.2` |
//! | `thresholds` | `DERMTRIAGE_THRESHOLDS` | from the quality model |
//! | `max_upload_bytes` | `DERMTRIAGE_MAX_UPLOAD_BYTES` | 33554432 |
//! | `models.quality` | `DERMTRIAGE_QUALITY_MODEL` | none |
//! | `models.classifiers` | `DERMTRIAGE_CLASSIFIERS` | none |
//! | `models.fusion` | `DERMTRIAGE_FUSION_MODEL` | none |
//!
//! List values in the environment are comma separated. Relative model
//! paths in a file are resolved against the file's directory.

use std::path::{Path, PathBuf};

use dermtriage_core::classify::ClassTaxonomy;
use dermtriage_core::imaging::CropSpec;
use dermtriage_core::quality::{validate_thresholds, INDICATOR_COUNT};
use dermtriage_core::workflow::StoreConfig;
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "DERMTRIAGE_";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPaths {
    pub quality: Option<PathBuf>,
    #[serde(default)]
    pub classifiers: Vec<PathBuf>,
    pub fusion: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaxonomyChoice {
    #[default]
    DermatologySeven,
    SharedSix,
}

impl TaxonomyChoice {
    pub fn taxonomy(self) -> ClassTaxonomy {
        match self {
            TaxonomyChoice::DermatologySeven => ClassTaxonomy::dermatology_seven(),
            TaxonomyChoice::SharedSix => ClassTaxonomy::shared_six(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub storage_dir: PathBuf,
    pub bind: String,
    pub taxonomy: TaxonomyChoice,
    pub crop_fraction: f64,
    pub roi_padding: f64,
    /// Per-indicator thresholds in order sharpness, blur, exposure, compression.
    pub thresholds: Option<[f64; INDICATOR_COUNT]>,
    pub max_upload_bytes: usize,
    pub models: ModelPaths,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            storage_dir: PathBuf::from("dermtriage-data"),
            bind: "127.0.0.1:8080".into(),
            taxonomy: TaxonomyChoice::default(),
            crop_fraction: 1.0,
            roi_padding: 1.2,
            thresholds: None,
            max_upload_bytes: 32 << 20,
            models: ModelPaths::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{key}: {message}")]
    Value { key: String, message: String },
}

fn bad(key: &str, message: impl std::fmt::Display) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        message: message.to_string(),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, raw: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| bad(key, format!("`{s}`: {e}"))))
        .collect()
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_relative(base);
        Ok(cfg)
    }

    /// File (when given) plus the process environment.
    pub fn load_with_env(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply_env(std::env::vars())?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.storage_dir);
        self.models.quality.iter_mut().for_each(fix);
        self.models.classifiers.iter_mut().for_each(fix);
        self.models.fusion.iter_mut().for_each(fix);
    }

    /// Applies every `DERMTRIAGE_*` variable in `vars`; unknown names are errors.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (name, value) in vars {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            match key {
                "STORAGE_DIR" => self.storage_dir = PathBuf::from(value),
                "BIND" => self.bind = value,
                "TAXONOMY" => {
                    self.taxonomy = TaxonomyChoice::deserialize(serde::de::value::StrDeserializer::<
                        serde::de::value::Error,
                    >::new(value.trim()))
                    .map_err(|e| bad(&name, e))?
                }
                "CROP_FRACTION" => self.crop_fraction = value.trim().parse().map_err(|e| bad(&name, e))?,
                "ROI_PADDING" => self.roi_padding = value.trim().parse().map_err(|e| bad(&name, e))?,
                "MAX_UPLOAD_BYTES" => self.max_upload_bytes = value.trim().parse().map_err(|e| bad(&name, e))?,
                "THRESHOLDS" => {
                    let t: Vec<f64> = parse_list(&name, &value)?;
                    let t: [f64; INDICATOR_COUNT] = t
                        .try_into()
                        .map_err(|_| bad(&name, format!("expected {INDICATOR_COUNT} values")))?;
                    self.thresholds = Some(t);
                }
                "QUALITY_MODEL" => self.models.quality = Some(PathBuf::from(value)),
                "CLASSIFIERS" => self.models.classifiers = parse_list(&name, &value)?,
                "FUSION_MODEL" => self.models.fusion = Some(PathBuf::from(value)),
                _ => return Err(bad(&name, "unknown setting")),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.store_config().map_err(|e| bad("crop_fraction/roi_padding", e))?;
        if let Some(t) = &self.thresholds {
            validate_thresholds(t).map_err(|e| bad("thresholds", e))?;
        }
        if self.max_upload_bytes == 0 {
            return Err(bad("max_upload_bytes", "must be positive"));
        }
        if self.models.fusion.is_some() && self.models.classifiers.is_empty() {
            return Err(bad("models.fusion", "a fusion model needs classifiers"));
        }
        Ok(())
    }

    pub fn store_config(&self) -> dermtriage_core::Result<StoreConfig> {
        let crop = CropSpec::new(self.crop_fraction)?;
        if !(self.roi_padding.is_finite() && self.roi_padding >= 1.0) {
            return Err(dermtriage_core::Error::Validation(format!(
                "roi padding {} must be >= 1",
                self.roi_padding
            )));
        }
        Ok(StoreConfig {
            crop,
            roi_padding: self.roi_padding,
        })
    }
}
