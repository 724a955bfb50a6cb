//! TOML run configuration.
//!
//! ```toml
//! joints = 3                # keep the first joints of the desk limits
//! lambda = 0.5
//!
//! [limits]                  # replaces the desk limits entirely
//! q_max = [3.14, 2.25, 3.14]
//! qd_max = [1.4, 1.4, 1.4]
//! qdd_max = [3.0, 3.0, 3.0]
//! qddd_max = [15.0, 15.0, 15.0]
//!
//! [solver]
//! max_iterations = 200
//!
//! [model]
//! d_model = 16
//! heads = 2
//!
//! [train]
//! epochs = 50
//! batch_size = 32
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use trajopt::neural::TrainConfig;
use trajopt::planner::DEFAULT_LAMBDA;
use trajopt::sqp::SqpSettings;
use trajopt::RobotLimits;

use crate::CliError;

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "TRAJOPT_CONFIG";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: Option<usize>,
    pub heads: Option<usize>,
    pub context_layers: Option<usize>,
    pub source_layers: Option<usize>,
    pub ffn_hidden: Option<usize>,
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub joints: Option<usize>,
    pub lambda: f64,
    pub limits: Option<RobotLimits>,
    pub solver: SqpSettings,
    pub model: ModelSection,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            joints: None,
            lambda: DEFAULT_LAMBDA,
            limits: None,
            solver: SqpSettings::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    /// Reads `explicit`, else the file named by [`CONFIG_ENV`], else defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self, CliError> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from),
        };
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| CliError::missing(format!("config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn limits(&self) -> Result<RobotLimits, CliError> {
        let base = self.limits.clone().unwrap_or_else(RobotLimits::gen3_desk);
        match self.joints {
            None => Ok(base),
            Some(k) => Ok(base.truncated(k)?),
        }
    }
}
