//! Run configuration: one TOML file, every field optional, command-line flags
//! applied on top.

use std::path::{Path, PathBuf};

use disentangle_core::{Dataset, ModelConfig, ProbeConfig, SyntheticSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::dataset_io;
use crate::error::{AppError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Rendered on the fly.
    Synthetic(SyntheticSpec),
    /// A cache written by `gen-data`.
    Cache { path: PathBuf },
    /// `<path>/<class>/<image>`; optional `path,id` CSV for identity labels.
    Folder {
        path: PathBuf,
        #[serde(default)]
        id_labels: Option<PathBuf>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub split_seed: u64,
    /// Reconstruction weights tried by `ablate`.
    pub ablation_beta1: Vec<f64>,
    pub data: DataSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs/default"),
            split: [0.8, 0.1, 0.1],
            split_seed: 0,
            ablation_beta1: vec![1.0, 0.001, 0.0],
            data: DataSource::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
        }
    }
}

/// Flag values that override the file; `None` leaves the file's value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub beta3: Option<f64>,
    pub epochs: Option<usize>,
    pub dataset: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| AppError::Config(format!("bad config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Reads `path` if given, otherwise starts from defaults, then applies the flags.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| AppError::Config(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply(overrides);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        if let Some(s) = o.seed {
            self.train.seed = s;
            self.split_seed = s;
            if let DataSource::Synthetic(spec) = &mut self.data {
                spec.seed = s;
            }
        }
        if let Some(b) = o.beta1 {
            self.train.weights.beta1 = b;
        }
        if let Some(b) = o.beta2 {
            self.train.weights.beta2 = b;
        }
        if let Some(b) = o.beta3 {
            self.train.weights.beta3 = b;
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
        }
        if let Some(p) = &o.dataset {
            // directories are image folders, files are caches
            self.data = if p.is_dir() {
                DataSource::Folder { path: p.clone(), id_labels: None }
            } else {
                DataSource::Cache { path: p.clone() }
            };
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.train.weights.validate()?;
        if self.train.weights.beta1 > 0.0 && !self.model.enable_decoder {
            return Err(AppError::Config("beta1 > 0 needs model.enable_decoder = true".into()));
        }
        Ok(())
    }

    /// Loads the configured dataset.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.data {
            DataSource::Synthetic(spec) => Ok(disentangle_core::generate_synthetic_dataset(spec)?),
            DataSource::Cache { path } => dataset_io::load_dataset(path),
            DataSource::Folder { path, id_labels } => {
                let load = dataset_io::load_image_folder(path, self.model.image_size, self.model.channels, id_labels.as_deref())?;
                if load.skipped > 0 {
                    log::warn!("skipped {} unreadable files under {}", load.skipped, path.display());
                }
                Ok(load.dataset)
            }
        }
    }

    /// Takes image geometry and class counts from the dataset.
    pub fn adopt_dataset_shape(&mut self, ds: &Dataset) {
        self.model.image_size = ds.image_size;
        self.model.channels = ds.channels;
        self.model.n_exp_classes = ds.n_exp_classes;
        if self.model.enable_identity_adversary {
            self.model.n_id_classes = Some(ds.n_id_classes);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);

        let partial = RunConfig::from_toml("[train]\nepochs = 3\n[data]\nkind = \"cache\"\npath = \"d.bin\"\n").unwrap();
        assert_eq!(partial.train.epochs, 3);
        assert_eq!(partial.data, DataSource::Cache { path: "d.bin".into() });
        assert_eq!(partial.model, ModelConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[train]\nepoch = 3\n").is_err());
    }

    #[test]
    fn flags_beat_file_values() {
        let mut cfg = RunConfig::from_toml("[train]\nepochs = 3\nseed = 1\n").unwrap();
        cfg.apply(&Overrides { epochs: Some(7), beta3: Some(0.0), ..Overrides::default() });
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.seed, 1);
        assert_eq!(cfg.train.weights.beta3, 0.0);
    }
}
