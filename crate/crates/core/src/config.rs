//! TOML run configuration. Unknown keys are rejected.
//!
//! ```toml
//! seed = 1
//!
//! [network]
//! task = "classification"
//! input_points = 256
//! num_classes = 3
//! layers = [
//!     { k = 8, d = 1, n_out = 96, c_out = 32 },
//!     { k = 12, d = 2, n_out = 32, c_out = 64 },
//! ]
//! head = { widths = [64], dropout = 0.5 }
//!
//! [optimizer]
//! lr = 0.01
//! batch_size = 8
//! epochs = 40
//!
//! [augmentation]
//! enabled = true
//!
//! [paths]
//! dataset = "data/shapes"
//! checkpoint_dir = "runs/shapes"
//! metrics = "runs/shapes/metrics.txt"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub epochs: usize,
    /// Multiplies the learning rate after every epoch.
    #[serde(default = "unit")]
    pub lr_decay: f64,
}

fn default_lr() -> f64 {
    0.01
}

fn default_batch() -> usize {
    8
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Mean point count of the resampled clouds; defaults to the network's input size.
    #[serde(default)]
    pub target_points: Option<usize>,
}

fn yes() -> bool {
    true
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            enabled: true,
            target_points: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
    #[serde(default)]
    pub metrics: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluation passes per cloud for segmentation.
    #[serde(default = "ten")]
    pub passes: usize,
}

fn ten() -> usize {
    10
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { passes: ten() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesConfig {
    #[serde(default = "fifteen")]
    pub reps: usize,
    #[serde(default = "thirty_two")]
    pub draws: usize,
    /// Layer to probe; defaults to the first layer, whose lifted features carry coordinates only.
    #[serde(default)]
    pub layer: Option<usize>,
}

fn fifteen() -> usize {
    15
}

fn thirty_two() -> usize {
    32
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            reps: fifteen(),
            draws: thirty_two(),
            layer: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub network: NetworkSpec,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub augmentation: AugmentationConfig,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub features: FeaturesConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.paths.dataset, &mut cfg.paths.checkpoint_dir, &mut cfg.paths.metrics]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", o.lr)));
        }
        if o.batch_size == 0 {
            return Err(Error::config("batch_size must be ≥ 1"));
        }
        if !(o.lr_decay > 0.0 && o.lr_decay <= 1.0) {
            return Err(Error::config("lr_decay must lie in (0, 1]"));
        }
        if self.eval.passes == 0 {
            return Err(Error::config("eval.passes must be ≥ 1"));
        }
        if self.augmentation.target_points == Some(0) {
            return Err(Error::config("augmentation.target_points must be ≥ 1"));
        }
        self.network.resolve()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resample_target(&self) -> usize {
        self.augmentation.target_points.unwrap_or(self.network.input_points)
    }
}
