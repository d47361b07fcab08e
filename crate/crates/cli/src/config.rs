//! Run configuration: defaults, an optional TOML file and command-line
//! overrides, applied in that order of increasing precedence.

use std::path::Path;

use artgnn::data::sha256_hex;
use artgnn::model::{DEFAULT_BACKEND_WIDTHS, DEFAULT_GC_WIDTH, DEFAULT_OUTPUT_DIM};
use artgnn::{ModelConfig, TrainConfig};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{io, CliError, Result};

pub const DEFAULT_GC_LAYERS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Real,
    Random,
}

/// `[model]` and `[train]` tables of a config file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub model: ModelOverrides,
    #[serde(default)]
    pub train: TrainOverrides,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
        toml::from_str(&text).map_err(|source| CliError::Toml {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    /// Number of graph convolution layers (0 gives the dense baseline).
    #[arg(long)]
    pub gc_layers: Option<usize>,
    #[arg(long)]
    pub gc_width: Option<usize>,
    /// Comma-separated back-end layer widths.
    #[arg(long, value_delimiter = ',')]
    pub backend_widths: Option<Vec<usize>>,
    #[arg(long)]
    pub output_dim: Option<usize>,
    #[arg(long, value_enum)]
    pub features: Option<FeatureMode>,
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub base_lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub gc_layers: usize,
    pub gc_width: usize,
    pub backend_widths: Vec<usize>,
    pub output_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelSettings,
    pub features: FeatureMode,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn resolve(file: Option<&FileConfig>, model: &ModelOverrides, train: &TrainOverrides) -> Result<Self> {
        let empty = FileConfig::default();
        let file = file.unwrap_or(&empty);
        let (fm, ft) = (&file.model, &file.train);
        let defaults = TrainConfig::default();
        let config = Self {
            model: ModelSettings {
                gc_layers: model.gc_layers.or(fm.gc_layers).unwrap_or(DEFAULT_GC_LAYERS),
                gc_width: model.gc_width.or(fm.gc_width).unwrap_or(DEFAULT_GC_WIDTH),
                backend_widths: model
                    .backend_widths
                    .clone()
                    .or_else(|| fm.backend_widths.clone())
                    .unwrap_or_else(|| DEFAULT_BACKEND_WIDTHS.to_vec()),
                output_dim: model.output_dim.or(fm.output_dim).unwrap_or(DEFAULT_OUTPUT_DIM),
            },
            features: model.features.or(fm.features).unwrap_or(FeatureMode::Real),
            train: TrainConfig {
                epochs: train.epochs.or(ft.epochs).unwrap_or(defaults.epochs),
                warmup_epochs: train
                    .warmup_epochs
                    .or(ft.warmup_epochs)
                    .unwrap_or(defaults.warmup_epochs),
                base_lr: train.base_lr.or(ft.base_lr).unwrap_or(defaults.base_lr),
                batch_size: train.batch_size.or(ft.batch_size).unwrap_or(defaults.batch_size),
                margin: train.margin.or(ft.margin).unwrap_or(defaults.margin),
                seed: train.seed.or(ft.seed).unwrap_or(defaults.seed),
            },
        };
        config.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if config.model.backend_widths.is_empty() {
            return Err(CliError::Config("backend_widths must not be empty".into()));
        }
        Ok(config)
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            gc_layers: self.model.gc_layers,
            gc_width: self.model.gc_width,
            backend_widths: self.model.backend_widths.clone(),
            output_dim: self.model.output_dim,
        }
    }

    /// Hash of the resolved configuration together with the input bundle.
    pub fn fingerprint(&self, bundle_hash: &str) -> String {
        let value = serde_json::json!({ "config": self, "bundle_hash": bundle_hash });
        sha256_hex(value.to_string().as_bytes())
    }
}
