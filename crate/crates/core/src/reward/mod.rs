//! Batch-terminal reward and its redistribution to individual instances.
//!
//! A batch episode ends with one reward: the probe-set cross-entropy
//! improvement caused by the student update. It is scaled by a warm-up
//! factor, then a recurrent [`Corrector`] turns it into per-instance rewards
//! by differencing its cumulative predictions. A [`StateAdjuster`] rewrites
//! the stored states so that they stay predictive of the calibrated return.

mod corrector;
mod updater;

pub use corrector::{
    calibrate_rewards, corrector_loss, corrector_train_step, quantize_prediction, redistribute,
    Corrector, Episode, RewardBatch, CORRECTOR_INPUT_DIM,
};
pub use updater::{StateAdjuster, StateUpdate};

use serde::{Deserialize, Serialize};

use crate::distill::{evaluate, LabeledInstance};
use crate::error::{Error, Result};
use crate::numkernel::{sigmoid, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Number of epochs over which the reward grows to full size.
    pub warmup_n: usize,
    pub probe_size: usize,
    /// Weight of the final-prediction term of the corrector loss.
    pub alpha_c: f64,
    /// Weight of the per-step return term of the corrector loss.
    pub beta_c: f64,
    pub corrector_lr: f64,
    pub corrector_hidden: usize,
    pub updater_lr: f64,
    pub updater_hidden: usize,
    /// Episodes kept for corrector training.
    pub window: usize,
    /// Episodes sampled from the window for each corrector step.
    pub episodes_per_step: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            warmup_n: 5,
            probe_size: 256,
            alpha_c: 1.0,
            beta_c: 0.5,
            corrector_lr: 1e-3,
            corrector_hidden: 32,
            updater_lr: 1e-3,
            updater_hidden: 16,
            window: 64,
            episodes_per_step: 8,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("reward.{m}")));
        if self.warmup_n == 0 {
            return bad("warmup_n must be at least 1");
        }
        if self.probe_size == 0 {
            return bad("probe_size must be at least 1");
        }
        if !(self.alpha_c >= 0.0 && self.beta_c >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if self.window == 0 || self.episodes_per_step == 0 {
            return bad("window and episodes_per_step must be positive");
        }
        if self.corrector_hidden == 0 || self.updater_hidden == 0 {
            return bad("hidden sizes must be positive");
        }
        if !(self.corrector_lr >= 0.0 && self.updater_lr >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        Ok(())
    }
}

/// Probe-set cross-entropy before the update minus after it; positive means
/// the student improved.
pub fn measure_batch_reward(
    student_before: &Mlp,
    student_after: &Mlp,
    probe: &[LabeledInstance],
) -> Result<f64> {
    if probe.is_empty() {
        return Err(Error::domain("probe set is empty"));
    }
    let (before, _) = evaluate(student_before, probe)?;
    let (after, _) = evaluate(student_after, probe)?;
    Ok(before - after)
}

/// `sigmoid(epoch / n)`.
pub fn warmup_factor(epoch: usize, n: usize) -> f64 {
    sigmoid(epoch as f64 / n.max(1) as f64)
}

pub fn warmup_scale(raw_reward: f64, epoch: usize, n: usize) -> f64 {
    warmup_factor(epoch, n) * raw_reward
}
