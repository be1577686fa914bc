//! Experiment manifests.

use std::fmt;
use std::path::{Path, PathBuf};

use fedomg::data::{BlobsConfig, RECT4_DOMAINS};
use fedomg::{DirichletPartition, ExperimentConfig, ExportFormat, ModelKind, Rect4Config};
use serde::{Deserialize, Serialize};

/// A schema or validation failure, tied to the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            message: message.into(),
        }
    }

    fn under(prefix: &str, (field, message): (&'static str, String)) -> Self {
        ConfigError::new(format!("{prefix}.{field}"), message)
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "invalid config: {}", self.message)
        } else {
            write!(f, "invalid config field `{}`: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub experiment: ExperimentConfig,
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Four shifted domains; one is held out as the target.
    Rect4 {
        points_per_domain: usize,
        #[serde(default = "default_noise")]
        noise_fraction: f64,
        #[serde(default)]
        seed: u64,
        held_out: usize,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    /// Gaussian blobs split across clients by label skew.
    Blobs {
        num_classes: usize,
        #[serde(default = "default_blob_dim")]
        dim: usize,
        points_per_class: usize,
        #[serde(default = "default_center_radius")]
        center_radius: f64,
        #[serde(default = "default_std")]
        std: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        partition: DirichletPartition,
    },
    /// IDX image/label files split across clients by label skew.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        partition: DirichletPartition,
    },
}

fn default_noise() -> f64 {
    0.1
}

fn default_test_fraction() -> f64 {
    0.25
}

fn default_blob_dim() -> usize {
    2
}

fn default_center_radius() -> f64 {
    3.0
}

fn default_std() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: PathBuf,
    /// Inferred from the extension when absent.
    #[serde(default)]
    pub format: Option<ExportFormat>,
}

impl OutputConfig {
    pub fn format(&self) -> ExportFormat {
        self.format.unwrap_or_else(|| ExportFormat::from_path(&self.path))
    }
}

impl DatasetConfig {
    pub fn rect4(&self) -> Option<Rect4Config> {
        match *self {
            DatasetConfig::Rect4 {
                points_per_domain,
                noise_fraction,
                seed,
                ..
            } => Some(Rect4Config {
                points_per_domain,
                noise_fraction,
                seed,
            }),
            _ => None,
        }
    }

    pub fn blobs(&self) -> Option<BlobsConfig> {
        match *self {
            DatasetConfig::Blobs {
                num_classes,
                dim,
                points_per_class,
                center_radius,
                std,
                seed,
                ..
            } => Some(BlobsConfig {
                num_classes,
                dim,
                points_per_class,
                center_radius,
                std,
                seed,
            }),
            _ => None,
        }
    }

    fn validate(&self, exp: &ExperimentConfig) -> Result<(), ConfigError> {
        let model = &exp.model;
        let check_fraction = |f: f64| {
            if f > 0.0 && f < 1.0 {
                Ok(())
            } else {
                Err(ConfigError::new(
                    "dataset.test_fraction",
                    format!("must lie in (0, 1), got {f}"),
                ))
            }
        };
        match self {
            DatasetConfig::Rect4 {
                held_out,
                test_fraction,
                ..
            } => {
                self.rect4()
                    .expect("rect4 variant")
                    .validate()
                    .map_err(|e| ConfigError::under("dataset", e))?;
                check_fraction(*test_fraction)?;
                if *held_out >= RECT4_DOMAINS {
                    return Err(ConfigError::new(
                        "dataset.held_out",
                        format!("must be < {RECT4_DOMAINS}, got {held_out}"),
                    ));
                }
                if model.input_dim != 2 || model.num_classes != 2 {
                    return Err(ConfigError::new(
                        "experiment.model",
                        "rect4 needs input_dim 2 and num_classes 2",
                    ));
                }
            }
            DatasetConfig::Blobs {
                num_classes,
                dim,
                test_fraction,
                partition,
                ..
            } => {
                self.blobs()
                    .expect("blobs variant")
                    .validate()
                    .map_err(|e| ConfigError::under("dataset", e))?;
                check_fraction(*test_fraction)?;
                partition
                    .validate()
                    .map_err(|e| ConfigError::under("dataset.partition", e))?;
                if model.input_dim != *dim || model.num_classes != *num_classes {
                    return Err(ConfigError::new(
                        "experiment.model",
                        format!("blobs need input_dim {dim} and num_classes {num_classes}"),
                    ));
                }
            }
            DatasetConfig::Idx { partition, .. } => {
                partition
                    .validate()
                    .map_err(|e| ConfigError::under("dataset.partition", e))?;
                if model.kind == ModelKind::LinearBinary {
                    return Err(ConfigError::new(
                        "experiment.model.kind",
                        "linear_binary only fits rect4",
                    ));
                }
            }
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { String::new() } else { path };
            ConfigError::new(field, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.experiment
            .validate()
            .map_err(|e| ConfigError::under("experiment", e))?;
        self.dataset.validate(&self.experiment)?;
        if self.output.path.as_os_str().is_empty() {
            return Err(ConfigError::new("output.path", "must not be empty"));
        }
        Ok(())
    }
}
