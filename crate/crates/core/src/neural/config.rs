use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn default_d_model() -> usize {
    32
}
fn default_heads() -> usize {
    8
}
fn default_layers() -> usize {
    6
}
fn default_dropout() -> f64 {
    0.1
}

/// Architecture of the dual-encoder model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Joints `K`.
    pub joints: usize,
    /// Longest supported path `I_max`.
    pub max_waypoints: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_layers")]
    pub context_layers: usize,
    #[serde(default = "default_layers")]
    pub source_layers: usize,
    /// FFN and output-head hidden width; `4·d_model` when absent.
    #[serde(default)]
    pub ffn_hidden: Option<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(joints: usize, max_waypoints: usize) -> Self {
        Self {
            joints,
            max_waypoints,
            d_model: default_d_model(),
            heads: default_heads(),
            context_layers: default_layers(),
            source_layers: default_layers(),
            ffn_hidden: None,
            dropout: default_dropout(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints < 2 {
            return Err(Error::UnsupportedConfig("at least two joints are required".into()));
        }
        if self.max_waypoints < 2 {
            return Err(Error::UnsupportedConfig("max_waypoints must be at least 2".into()));
        }
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::UnsupportedConfig(format!(
                "d_model {} is not divisible into {} heads",
                self.d_model, self.heads
            )));
        }
        if self.hidden() == 0 {
            return Err(Error::UnsupportedConfig("ffn_hidden must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::UnsupportedConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Padded token count `L = (K − 1)·I_max` of both encoder inputs.
    pub fn seq_len(&self) -> usize {
        (self.joints - 1) * self.max_waypoints
    }

    /// `M_out = I_max + 4`.
    pub fn coef_len(&self) -> usize {
        self.max_waypoints + 4
    }

    /// `N_out = I_max + 10`.
    pub fn knot_len(&self) -> usize {
        self.max_waypoints + 10
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn hidden(&self) -> usize {
        self.ffn_hidden.unwrap_or(4 * self.d_model)
    }
}
