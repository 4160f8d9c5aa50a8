//! Experiment configuration.
//!
//! Every field has a default, so `{}` is a valid config. Relative
//! directories are resolved against the directory holding the config file.
//!
//! ```json
//! {
//!   "data":    { "size": 32, "n_pairs": 300, "master_seed": 0,
//!                "train_fraction": 0.6666666666666666, "dir": "data" },
//!   "teacher": { "mode": "standard", "training": { ... }, "dir": "teacher" },
//!   "student": { "training": { ... },
//!                "distill": { "temperature": 4.0, "alpha": 0.7, "beta": 0.3,
//!                             "gamma": 1.0, "scale": 0.5 },
//!                "dir": "student" },
//!   "eval":    { "model": "student", "dir": "eval" }
//! }
//! ```
//!
//! `training` blocks take the [`TrainingConfig`] fields: `epochs`,
//! `batch_size`, `learning_rate_g`, `learning_rate_d`, `optimizer`
//! (`{"kind": "sgd"}` or `{"kind": "adam", "beta1", "beta2", "eps"}`),
//! `clip_w`, `seed`, `d_steps_per_g_step`, `augment`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distill::DistillConfig;
use crate::gan::{Mode, TrainingConfig};
use crate::{Error, Result};

pub const SEED_OVERRIDE_ENV: &str = "KGAN_SEED_OVERRIDE";
pub const CONFIG_COPY: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub size: usize,
    pub n_pairs: usize,
    pub master_seed: u64,
    pub train_fraction: f64,
    pub dir: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            size: 32,
            n_pairs: 300,
            master_seed: 0,
            train_fraction: 2.0 / 3.0,
            dir: "data".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub mode: Mode,
    pub training: TrainingConfig,
    pub dir: PathBuf,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Standard,
            training: TrainingConfig::default(),
            dir: "teacher".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub training: TrainingConfig,
    pub distill: DistillConfig,
    pub dir: PathBuf,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            training: TrainingConfig {
                seed: 1,
                ..TrainingConfig::default()
            },
            distill: DistillConfig::default(),
            dir: "student".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalModel {
    Teacher,
    Student,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Which checkpoint `evaluate` scores when `--checkpoint` is not given.
    pub model: EvalModel,
    pub dir: PathBuf,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            model: EvalModel::Student,
            dir: "eval".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub teacher: TeacherConfig,
    pub student: StudentConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path`, resolves relative directories against its parent,
    /// applies `KGAN_SEED_OVERRIDE` and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base)?;
        if let Some(seed) = seed_override()? {
            cfg.override_seeds(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) -> Result<()> {
        for dir in [
            &mut self.data.dir,
            &mut self.teacher.dir,
            &mut self.student.dir,
            &mut self.eval.dir,
        ] {
            let joined = base.join(&*dir);
            *dir = std::path::absolute(&joined).map_err(|e| Error::io(&joined, e))?;
        }
        Ok(())
    }

    pub fn override_seeds(&mut self, seed: u64) {
        self.data.master_seed = seed;
        self.teacher.training.seed = seed;
        self.student.training.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        crate::data::check_size(self.data.size).map_err(wrap)?;
        if self.data.n_pairs < 3 {
            return Err(Error::Config("data.n_pairs must be >= 3".into()));
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(Error::Config("data.train_fraction must be in (0, 1)".into()));
        }
        self.teacher.training.validate(self.teacher.mode).map_err(wrap)?;
        self.student.training.validate(Mode::Standard).map_err(wrap)?;
        self.student.distill.validate().map_err(wrap)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Writes the resolved config as `config.json` in `dir`.
    pub fn write_copy(&self, dir: &Path) -> Result<()> {
        let path = dir.join(CONFIG_COPY);
        std::fs::write(&path, self.to_json()?).map_err(|e| Error::io(&path, e))
    }
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_OVERRIDE_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_OVERRIDE_ENV}={v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("{SEED_OVERRIDE_ENV}: {e}"))),
    }
}
