//! Run configuration: JSON file, flag overrides, defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use eigenprint_core::gradient::GradientMethod;
use eigenprint_core::nn::{desk_scale_config, NetworkConfig, TrainConfig};
use eigenprint_core::synth::{default_class_specs, ClassSpec};
use eigenprint_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_per_class: usize,
    pub size: usize,
    pub specs: Vec<ClassSpec>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { n_per_class: 100, size: 64, specs: default_class_specs() }
    }
}

/// Everything a pipeline run needs. Field precedence is
/// flag > config file > default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Raw dataset directory (gen-data writes here).
    pub data_dir: PathBuf,
    /// Output directory for derived datasets, checkpoints, fingerprints,
    /// reports.
    pub out_dir: PathBuf,
    /// Root seed; every random stream in the pipeline derives from it.
    pub seed: u64,
    pub deterministic: bool,
    pub gradient_method: GradientMethod,
    pub generator: GeneratorConfig,
    /// Apply mirror/flip augmentation when assembling the training set.
    pub augment: bool,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// 1-based ordinal of the ReLU layer fingerprints are extracted from.
    pub fingerprint_relu: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            seed: 42,
            deterministic: true,
            gradient_method: GradientMethod::Sobel,
            generator: GeneratorConfig::default(),
            augment: true,
            network: desk_scale_config(0.5),
            train: TrainConfig::default(),
            fingerprint_relu: 2,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))
    }

    /// Training configuration with the run-level seed and determinism flag
    /// applied.
    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.seed = self.seed;
        cfg.deterministic = self.deterministic;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let config = RunConfig::default();
        let json = serde_json::to_string_pretty(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let parsed: RunConfig = serde_json::from_str(r#"{"seed": 7}"#).unwrap();
        assert_eq!(parsed.seed, 7);
        assert_eq!(parsed.generator.n_per_class, 100);
        assert_eq!(parsed.fingerprint_relu, 2);
    }
}
