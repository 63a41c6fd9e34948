//! Run configuration.
//!
//! Every section is optional and falls back to its defaults, except the
//! top-level `seed`, which must be given. Stage seeds are derived from it with
//! [`stage_seed`], so one number pins every random draw of a run.

use std::fs;
use std::path::{Path, PathBuf};

use midt_core::conditioning::GroupMask;
use midt_core::diffusion::ScheduleConfig;
use midt_core::downstream::ClassifierConfig;
use midt_core::metrics::SsimConfig;
use midt_core::rng::child_seed;
use midt_core::signal::OracleConfig;
use midt_core::spectro::{MidtConfig, DEFAULT_LOG_FLOOR};
use midt_core::{NetConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Independent seed streams, one per pipeline stage.
pub mod stage {
    pub const DATA: u64 = 1;
    pub const MODEL_INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const SAMPLE: u64 = 4;
    pub const PRIVACY: u64 = 5;
    pub const DOWNSTREAM: u64 = 6;
}

pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    child_seed(seed, stage)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: OracleConfig,
    #[serde(default)]
    pub splits: Splits,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub conditioning: GroupMask,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub privacy: PrivacySection,
    #[serde(default)]
    pub downstream: DownstreamSection,
    #[serde(default)]
    pub paths: Paths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Splits {
    pub train: Vec<u8>,
    pub validation: Vec<u8>,
    pub test: Vec<u8>,
}

impl Default for Splits {
    fn default() -> Self {
        Self { train: (1..=8).collect(), validation: vec![9], test: vec![10] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Weight of the spectral loss term.
    pub midt_weight: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub midt_windows: Vec<usize>,
    pub log_floor: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            midt_weight: 0.1,
            batch_size: 16,
            steps: 300,
            learning_rate: 2e-3,
            midt_windows: MidtConfig::DEFAULT_WINDOWS.to_vec(),
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Test records used as sampling templates; 0 takes all of them.
    pub n_records: usize,
    pub ssim: SsimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrivacySection {
    /// Records per set (members, holdout, synthetic); capped by availability.
    pub n: usize,
}

impl Default for PrivacySection {
    fn default() -> Self {
        Self { n: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownstreamSection {
    pub n_classes: usize,
    pub hidden: usize,
    pub kernel_size: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub repetitions: usize,
    /// Probability a synthetic record's class must reach to count as faithful.
    pub faithfulness_threshold: f64,
    pub augment: bool,
    pub substitute: bool,
}

impl Default for DownstreamSection {
    fn default() -> Self {
        let c = ClassifierConfig::default();
        Self {
            n_classes: c.n_classes,
            hidden: c.hidden,
            kernel_size: c.kernel_size,
            steps: c.steps,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            repetitions: 2,
            faithfulness_threshold: 0.5,
            augment: true,
            substitute: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Parent of the run directories. Not part of the config hash.
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { out: PathBuf::from("runs") }
    }
}

impl RunConfig {
    /// Parses TOML, reporting the dotted key path of any rejected entry.
    pub fn from_toml(text: &str, file: &Path) -> CliResult<Self> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| CliError::Config { file: file.to_path_buf(), message: e.to_string() })?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let message = e.into_inner().message().trim().to_string();
            CliError::ConfigKey { file: file.to_path_buf(), key, message }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(file: &Path) -> CliResult<Self> {
        if !file.exists() {
            return Err(CliError::MissingFile(file.to_path_buf()));
        }
        let text = fs::read_to_string(file).map_err(CliError::io(file))?;
        Self::from_toml(&text, file)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Setting(m));
        let setting = |e: midt_core::Error| CliError::Setting(e.to_string());
        self.data.validate().map_err(setting)?;
        self.net.validate().map_err(setting)?;
        self.schedule.build().map_err(setting)?;
        for f in self.splits.train.iter().chain(&self.splits.validation).chain(&self.splits.test) {
            if *f == 0 || *f > self.data.n_folds {
                return bad(format!("split fold {f} outside 1..={}", self.data.n_folds));
            }
        }
        if self.splits.train.is_empty() || self.splits.test.is_empty() {
            return bad("splits.train and splits.test must be non-empty".into());
        }
        self.train_config().objective(self.data.sample_rate_hz).map_err(setting)?;
        if let Some(w) = self.train.midt_windows.iter().find(|&&w| w > self.data.length) {
            return bad(format!("train.midt_windows entry {w} exceeds data.length {}", self.data.length));
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size must be >= 1".into());
        }
        if self.eval.ssim.window > self.data.length {
            return bad(format!("eval.ssim.window {} exceeds data.length {}", self.eval.ssim.window, self.data.length));
        }
        if self.downstream.repetitions == 0 {
            return bad("downstream.repetitions must be >= 1".into());
        }
        if self.downstream.n_classes < self.data.classes.len() {
            return bad(format!(
                "downstream.n_classes {} is below the {} oracle classes",
                self.downstream.n_classes,
                self.data.classes.len()
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical TOML form, excluding `paths`.
    pub fn hash(&self) -> String {
        let canonical = RunConfig { paths: Paths { out: PathBuf::new() }, ..self.clone() };
        let text = toml::to_string(&canonical).expect("run config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// `<paths.out>/<first 16 hex digits of the hash>`.
    pub fn run_dir(&self) -> PathBuf {
        self.paths.out.join(&self.hash()[..16])
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            midt_weight: t.midt_weight,
            batch_size: t.batch_size,
            steps: t.steps,
            learning_rate: t.learning_rate,
            seed: stage_seed(self.seed, stage::TRAIN),
            midt_windows: t.midt_windows.clone(),
            log_floor: t.log_floor,
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        let d = &self.downstream;
        ClassifierConfig {
            n_classes: d.n_classes,
            hidden: d.hidden,
            kernel_size: d.kernel_size,
            steps: d.steps,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            seed: stage_seed(self.seed, stage::DOWNSTREAM),
        }
    }

    /// The resolved configuration as written into the run directory.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
