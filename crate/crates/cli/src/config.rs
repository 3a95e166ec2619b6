//! Run configuration file.
//!
//! A TOML document with a required `schema_version` and one optional table per subcommand.
//! Unknown keys anywhere are rejected. Command-line flags are applied on top, and the
//! resulting effective configuration is written next to each run's outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use geonca::data::SynthConfig;
use geonca::eval::EvalConfig;
use geonca::trainer::{Task, TrainConfig};
use geonca::StepConfig;

use crate::error::{usage, CliResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const EFFECTIVE_CONFIG: &str = "config.toml";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Scalar type of parameters and state.
    pub precision: Precision,
    /// Write a checkpoint every this many updates; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Train on these locations only; empty means all.
    pub locations: Vec<String>,
    pub model: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            precision: Precision::F32,
            checkpoint_every: 500,
            locations: Vec::new(),
            model: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// `test`, `train` or `all`.
    pub split: String,
    /// Rollouts timed for the timing report; 0 skips timing.
    pub timing_runs: usize,
    /// Step rule for evaluation rollouts; the checkpoint's own rule when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<StepConfig>,
    pub protocol: EvalProtocol,
}

/// [`EvalConfig`] without its step rule, which lives one level up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalProtocol {
    pub steps: usize,
    pub trials: usize,
    pub diameter_ratio: f64,
    #[serde(with = "geonca::serde_u64")]
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            steps: e.steps,
            trials: e.trials,
            diameter_ratio: e.diameter_ratio,
            seed: e.seed,
        }
    }
}

impl EvalProtocol {
    pub fn with_step(&self, step: StepConfig) -> EvalConfig {
        EvalConfig {
            steps: self.steps,
            trials: self.trials,
            diameter_ratio: self.diameter_ratio,
            seed: self.seed,
            step,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            split: "test".into(),
            timing_runs: 30,
            step: None,
            protocol: EvalProtocol::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowSection {
    pub task: Task,
    pub steps: usize,
    /// Frame every this many steps.
    pub stride: usize,
    /// Damage disc radius of the regenerate task, in cells.
    pub damage_radius: f64,
    pub diameter_ratio: f64,
    #[serde(with = "geonca::serde_u64")]
    pub seed: u64,
    /// `location/timestamp`; the first test sample when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample: Option<String>,
    /// Transform target as `location/timestamp`; the next sample of the same location when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<StepConfig>,
}

impl Default for GrowSection {
    fn default() -> Self {
        Self {
            task: Task::Grow,
            steps: 128,
            stride: 16,
            damage_radius: 10.0,
            diameter_ratio: 0.5,
            seed: 0,
            sample: None,
            to: None,
            step: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeSection {
    pub host: String,
    pub port: u16,
    pub rate_cap: f64,
    pub max_sessions: usize,
    pub frame_queue: usize,
    pub diameter_ratio: f64,
}

impl Default for ServeSection {
    fn default() -> Self {
        let s = geonca_session::ServerConfig::default();
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            rate_cap: s.rate_cap,
            max_sessions: s.max_sessions,
            frame_queue: s.frame_queue,
            diameter_ratio: s.diameter_ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub grow: GrowSection,
    #[serde(default)]
    pub serve: ServeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            synth: SynthConfig::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            grow: GrowSection::default(),
            serve: ServeSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| usage(format!("config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(usage(format!(
                "config schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// The file's contents, or the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the effective configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
        let path = dir.join(EFFECTIVE_CONFIG);
        std::fs::write(&path, self.to_toml()).map_err(|e| usage(format!("{}: {e}", path.display())))
    }
}
