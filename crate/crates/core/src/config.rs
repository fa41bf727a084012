//! TOML run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::optim::AdamState;
use crate::phantom::{self, DomainFamily};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset directory, relative to the working directory.
    pub root: PathBuf,
    /// Families to generate; empty means all built-in families.
    pub families: Vec<String>,
    /// Samples per family.
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { root: PathBuf::from("data"), families: Vec::new(), count: 40, height: 64, width: 64, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Pool the train splits of the joint families.
    Joint,
    /// Train on one family only.
    Single,
}

impl TrainMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(TrainMode::Joint),
            "single" => Ok(TrainMode::Single),
            _ => Err(Error::Validation(format!("mode must be joint or single, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub checkpoint_interval: usize,
    pub log_interval: usize,
    pub seed: u64,
    pub mode: TrainMode,
    /// Families pooled in joint mode; empty means the built-in joint set.
    pub joint_families: Vec<String>,
    pub single_family: String,
    /// Seeds for `ablate`; empty means `[seed]`.
    pub ablation_seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 2,
            lr: AdamState::DEFAULT_LR,
            checkpoint_interval: 500,
            log_interval: 10,
            seed: 0,
            mode: TrainMode::Joint,
            joint_families: Vec::new(),
            single_family: phantom::TRAIN_FAMILY.to_string(),
            ablation_seeds: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: String,
    pub depth_bins: usize,
    pub glcm_levels: usize,
    pub hist_bins: usize,
    pub lesion_metrics: bool,
    pub glcm: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { split: "test".into(), depth_bins: 4, glcm_levels: 16, hist_bins: 32, lesion_metrics: true, glcm: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml())?;
        Ok(())
    }

    /// Applies a global seed to data, model and training.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let d = &self.data;
        if !d.height.is_power_of_two() || !d.width.is_power_of_two() || d.height < 16 || d.width < 16 {
            return Err(Error::Config(format!(
                "data.height and data.width must be powers of two >= 16, got {}x{}",
                d.height, d.width
            )));
        }
        if d.count == 0 {
            return Err(Error::Config("data.count must be positive".into()));
        }
        self.data_families()?;
        let t = &self.train;
        if t.batch_size == 0 || t.checkpoint_interval == 0 || t.log_interval == 0 {
            return Err(Error::Config("train.batch_size, checkpoint_interval and log_interval must be positive".into()));
        }
        if !(t.lr.is_finite() && t.lr > 0.0) {
            return Err(Error::Config(format!("train.lr must be positive, got {}", t.lr)));
        }
        self.training_families()?;
        let e = &self.eval;
        if e.depth_bins == 0 || e.glcm_levels == 0 || e.hist_bins == 0 {
            return Err(Error::Config("eval bin counts must be positive".into()));
        }
        phantom::Split::parse(&e.split).map_err(|err| Error::Config(err.to_string()))?;
        Ok(())
    }

    fn resolve(names: &[String], default: Vec<DomainFamily>) -> Result<Vec<DomainFamily>> {
        if names.is_empty() {
            return Ok(default);
        }
        names.iter().map(|n| phantom::family(n).map_err(|e| Error::Config(e.to_string()))).collect()
    }

    pub fn data_families(&self) -> Result<Vec<DomainFamily>> {
        Self::resolve(&self.data.families, phantom::families())
    }

    /// Family names whose train splits feed the configured mode.
    pub fn training_families(&self) -> Result<Vec<String>> {
        let fams = match self.train.mode {
            TrainMode::Joint => Self::resolve(&self.train.joint_families, phantom::joint_families())?,
            TrainMode::Single => vec![phantom::family(&self.train.single_family).map_err(|e| Error::Config(e.to_string()))?],
        };
        Ok(fams.into_iter().map(|f| f.name).collect())
    }

    pub fn ablation_seeds(&self) -> Vec<u64> {
        if self.train.ablation_seeds.is_empty() {
            vec![self.train.seed]
        } else {
            self.train.ablation_seeds.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
        assert_eq!(c.train.batch_size, 2);
        assert_eq!(c.train.lr, 2e-4);
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let e = RunConfig::parse("[model]\nstages = 2\n\n[train]\nbogus = 1\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(e.to_string().contains("line 5"), "{e}");
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let c = RunConfig::parse("[train]\niterations = 7\nmode = \"single\"\n").unwrap();
        assert_eq!(c.train.iterations, 7);
        assert_eq!(c.training_families().unwrap(), vec![phantom::TRAIN_FAMILY.to_string()]);
        assert_eq!(c.model, ModelConfig::default());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::parse("[data]\nheight = 48\n").is_err());
        assert!(RunConfig::parse("[model]\nenable_mbcr = false\nenable_fasd = false\n").is_err());
        assert!(RunConfig::parse("[train]\nsingle_family = \"x\"\nmode = \"single\"\n").is_err());
    }
}
