use serde::{Deserialize, Serialize};

use super::{Action, PpoConfig};
use crate::error::{check_len, Error, Result};
use crate::state::StateObservation;

/// Floor on the advantage variance used during normalization.
const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub state: StateObservation,
    pub raw_action: f64,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub return_to_go: f64,
    pub advantage: f64,
}

impl TransitionRecord {
    pub fn new(state: StateObservation, action: &Action) -> Self {
        TransitionRecord {
            state,
            raw_action: action.raw_action,
            log_prob: action.log_prob,
            value: action.value,
            reward: 0.0,
            return_to_go: 0.0,
            advantage: 0.0,
        }
    }
}

/// Transitions of one batch episode.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    records: Vec<TransitionRecord>,
    clears: u64,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        ReplayBuffer::default()
    }

    pub fn push(&mut self, record: TransitionRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TransitionRecord] {
        &self.records
    }

    pub fn records_mut(&mut self) -> &mut [TransitionRecord] {
        &mut self.records
    }

    pub fn states(&self) -> Vec<StateObservation> {
        self.records.iter().map(|r| r.state).collect()
    }

    pub fn raw_actions(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.raw_action).collect()
    }

    pub fn set_rewards(&mut self, rewards: &[f64]) -> Result<()> {
        check_len("buffer rewards", self.records.len(), rewards.len())?;
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("calibrated rewards".into()));
        }
        for (rec, r) in self.records.iter_mut().zip(rewards) {
            rec.reward = *r;
        }
        Ok(())
    }

    pub fn set_states(&mut self, states: &[StateObservation]) -> Result<()> {
        check_len("buffer states", self.records.len(), states.len())?;
        for (rec, s) in self.records.iter_mut().zip(states) {
            rec.state = *s;
        }
        Ok(())
    }

    pub fn clear(&mut self) {
        self.records.clear();
        self.clears += 1;
    }

    /// Number of times the buffer has been emptied.
    pub fn clears(&self) -> u64 {
        self.clears
    }
}

/// `G_t = sum_k gamma^k r_{t+k+1}`, where `rewards[t]` is the reward that
/// follows step `t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// Generalized advantage estimates with a zero value after the last step.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    check_len("gae values", rewards.len(), values.len())?;
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    let mut next_value = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * acc;
        out[t] = acc;
        next_value = values[t];
    }
    Ok(out)
}

/// Fills `return_to_go` (lambda-return) and the per-episode normalized advantage.
pub fn compute_advantages(buffer: &mut ReplayBuffer, config: &PpoConfig) -> Result<()> {
    if buffer.is_empty() {
        return Ok(());
    }
    let rewards: Vec<f64> = buffer.records.iter().map(|r| r.reward).collect();
    let values: Vec<f64> = buffer.records.iter().map(|r| r.value).collect();
    let adv = gae(&rewards, &values, config.gamma, config.gae_lambda)?;
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.max(VARIANCE_FLOOR).sqrt();
    for ((rec, a), v) in buffer.records.iter_mut().zip(&adv).zip(&values) {
        rec.return_to_go = a + v;
        rec.advantage = (a - mean) / std;
    }
    if buffer
        .records
        .iter()
        .any(|r| !(r.return_to_go.is_finite() && r.advantage.is_finite()))
    {
        return Err(Error::NonFinite("advantages".into()));
    }
    Ok(())
}
