//! Run configuration, read from TOML. Every field has a default, so an empty
//! file is a valid configuration.

use std::path::{Path, PathBuf};

use fmpq_core::model::{Variant, WidthConfig};
use fmpq_core::optim::Schedule;
use fmpq_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

/// Overrides `data.root` when set.
pub const DATA_ROOT_ENV: &str = "FMPQ_DATA_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleName {
    Cosine,
    Constant,
}

impl From<ScheduleName> for Schedule {
    fn from(s: ScheduleName) -> Self {
        match s {
            ScheduleName::Cosine => Schedule::Cosine,
            ScheduleName::Constant => Schedule::Constant,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Adaptive,
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WidthSection {
    pub main: usize,
    pub latent: usize,
    pub hyper: usize,
    pub main_strides: [usize; 4],
    pub hyper_strides: [usize; 2],
    pub negative_slope: f64,
}

impl Default for WidthSection {
    fn default() -> Self {
        let w = WidthConfig::default();
        Self {
            main: w.main,
            latent: w.latent,
            hyper: w.hyper,
            main_strides: w.main_strides,
            hyper_strides: w.hyper_strides,
            negative_slope: w.negative_slope,
        }
    }
}

impl From<&WidthSection> for WidthConfig {
    fn from(w: &WidthSection) -> Self {
        WidthConfig {
            main: w.main,
            latent: w.latent,
            hyper: w.hyper,
            main_strides: w.main_strides,
            hyper_strides: w.hyper_strides,
            negative_slope: w.negative_slope,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Base for relative directories below.
    pub root: Option<PathBuf>,
    pub train_dir: PathBuf,
    pub eval_dir: PathBuf,
    /// Defaults to `train_dir`.
    pub calib_dir: Option<PathBuf>,
    pub crop_size: usize,
    pub calib_count: usize,
    pub calib_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            root: None,
            train_dir: "train".into(),
            eval_dir: "eval".into(),
            calib_dir: None,
            crop_size: 64,
            calib_count: 16,
            calib_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: ScheduleName,
    pub clip_grad_norm: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::baseline();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr_weights,
            schedule: ScheduleName::Cosine,
            clip_grad_norm: t.clip_grad_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QatSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_weights: f64,
    pub lr_quant: f64,
    pub schedule: ScheduleName,
    pub clip_grad_norm: Option<f64>,
    pub activation_bits: u32,
    pub leak: f64,
}

impl Default for QatSection {
    fn default() -> Self {
        let t = TrainConfig::qat();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_weights: t.lr_weights,
            lr_quant: t.lr_quant,
            schedule: ScheduleName::Constant,
            clip_grad_norm: t.clip_grad_norm,
            activation_bits: 8,
            leak: fmpq_core::quant::DEFAULT_LEAK,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignSection {
    /// Tolerance in percent.
    pub beta: f64,
    pub b_max: u32,
}

impl Default for AssignSection {
    fn default() -> Self {
        Self {
            beta: 1.0,
            b_max: fmpq_core::assign::DEFAULT_B_MAX,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub cr_target: f64,
    pub beta_init: f64,
    pub mode: SearchMode,
    pub step: f64,
    pub max_iterations: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        use fmpq_core::search::*;
        Self {
            cr_target: 1.0,
            beta_init: DEFAULT_BETA_INIT,
            mode: SearchMode::Adaptive,
            step: DEFAULT_EXHAUSTIVE_STEP,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub variant: String,
    pub quality: usize,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub widths: WidthSection,
    pub data: DataSection,
    pub train: TrainSection,
    pub qat: QatSection,
    pub assign: AssignSection,
    pub search: SearchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::MeanScaleHyperprior.to_string(),
            quality: 3,
            seed: 0,
            jobs: 1,
            widths: WidthSection::default(),
            data: DataSection::default(),
            train: TrainSection::default(),
            qat: QatSection::default(),
            assign: AssignSection::default(),
            search: SearchSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config {
            path: origin.to_owned(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|message| Error::Config {
            path: origin.to_owned(),
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    fn validate(&self) -> std::result::Result<(), String> {
        self.variant.parse::<Variant>().map_err(|e| e.to_string())?;
        if self.quality >= fmpq_core::model::LAMBDAS.len() {
            return Err(format!("quality must be in 0..=5, got {}", self.quality));
        }
        if !(self.train.lr > 0.0 && self.qat.lr_weights > 0.0 && self.qat.lr_quant > 0.0) {
            return Err("learning rates must be positive".into());
        }
        if self.train.batch_size == 0 || self.qat.batch_size == 0 || self.data.crop_size == 0 {
            return Err("batch sizes and crop size must be positive".into());
        }
        if self.assign.b_max < fmpq_core::quant::MIN_BITS {
            return Err("b_max must be at least 2".into());
        }
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        self.variant.parse().expect("validated")
    }

    pub fn widths(&self) -> WidthConfig {
        (&self.widths).into()
    }

    fn data_root(&self) -> Option<PathBuf> {
        std::env::var_os(DATA_ROOT_ENV)
            .map(PathBuf::from)
            .or_else(|| self.data.root.clone())
    }

    /// Resolve a configured directory against the data root.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        match self.data_root() {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_owned(),
        }
    }

    pub fn train_dir(&self) -> PathBuf {
        self.resolve(&self.data.train_dir)
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.resolve(&self.data.eval_dir)
    }

    pub fn calib_dir(&self) -> PathBuf {
        self.resolve(self.data.calib_dir.as_ref().unwrap_or(&self.data.train_dir))
    }

    pub fn baseline_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr_weights: self.train.lr,
            lr_quant: self.train.lr,
            lambda: None,
            seed: self.seed,
            crop_size: self.data.crop_size,
            schedule: self.train.schedule.into(),
            clip_grad_norm: self.train.clip_grad_norm,
            start_epoch: 0,
        }
    }

    pub fn qat_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.qat.epochs,
            batch_size: self.qat.batch_size,
            lr_weights: self.qat.lr_weights,
            lr_quant: self.qat.lr_quant,
            lambda: None,
            seed: self.seed,
            crop_size: self.data.crop_size,
            schedule: self.qat.schedule.into(),
            clip_grad_norm: self.qat.clip_grad_norm,
            start_epoch: 0,
        }
    }
}
