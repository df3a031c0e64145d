use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Proposed,
    CycleganBaseline,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Proposed => "proposed",
            ModelKind::CycleganBaseline => "cyclegan_baseline",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "proposed" => Ok(ModelKind::Proposed),
            "cyclegan_baseline" | "cyclegan" => Ok(ModelKind::CycleganBaseline),
            other => Err(Error::InvalidConfig(format!(
                "unknown model `{other}`, expected proposed or cyclegan_baseline"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub d_steps_per_g_step: usize,
    pub log_every: u64,
    /// 0 disables periodic checkpoints; the final one is always written.
    pub checkpoint_every: u64,
    /// 0 disables periodic evaluation.
    pub eval_every: u64,
    pub model: ModelKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            learning_rate: 1e-4,
            batch_size: 16,
            total_steps: 1000,
            seed: 0,
            d_steps_per_g_step: 1,
            log_every: 1,
            checkpoint_every: 500,
            eval_every: 0,
            model: ModelKind::Proposed,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.d_steps_per_g_step == 0 {
            return Err(Error::InvalidConfig("d_steps_per_g_step must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be at least 1".into()));
        }
        Ok(())
    }
}
