use super::buffer::{ReplayBuffer, TransitionRecord};
use super::{gaussian_log_prob, Agent};
use crate::error::{check_len, Error, Result};
use crate::numkernel::{Mlp, Params};
use crate::state::StateObservation;

/// `min(r * A, clip(r, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    unclipped.min(clipped)
}

/// d(surrogate)/d(ratio): the advantage while the unclipped branch is the
/// minimum, zero once the clipped constant binds.
fn surrogate_ratio_grad(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if unclipped <= clipped {
        advantage
    } else {
        0.0
    }
}

/// Statistics of one pass over the buffer, measured before that pass's step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PassStats {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    /// Mean clipped surrogate; the actor minimizes its negative.
    pub surrogate: f64,
    pub critic_loss: f64,
    pub used: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PpoDiagnostics {
    pub passes: Vec<PassStats>,
}

impl PpoDiagnostics {
    fn mean_of(&self, f: impl Fn(&PassStats) -> f64) -> f64 {
        if self.passes.is_empty() {
            0.0
        } else {
            self.passes.iter().map(f).sum::<f64>() / self.passes.len() as f64
        }
    }

    pub fn mean_ratio(&self) -> f64 {
        self.mean_of(|p| p.mean_ratio)
    }

    pub fn clip_fraction(&self) -> f64 {
        self.mean_of(|p| p.clip_fraction)
    }

    pub fn actor_loss(&self) -> f64 {
        self.passes.last().map_or(0.0, |p| -p.surrogate)
    }

    pub fn critic_loss(&self) -> f64 {
        self.passes.last().map_or(0.0, |p| p.critic_loss)
    }

    pub fn dropped(&self) -> usize {
        self.passes.iter().map(|p| p.dropped).sum()
    }
}

impl Agent {
    /// Negative mean clipped surrogate over `records` and its actor gradient.
    ///
    /// Transitions whose ratio is not finite are excluded and counted.
    pub fn actor_loss_and_grad(
        &self,
        records: &[TransitionRecord],
    ) -> Result<(f64, Mlp, PassStats)> {
        let eps = self.config.clip_epsilon;
        let mut grad = self.actor.zeros_like();
        let mut stats = PassStats::default();
        let mut surrogate_sum = 0.0;
        let mut ratio_sum = 0.0;
        let mut clipped = 0usize;
        let mut per_sample = Vec::with_capacity(records.len());
        for rec in records {
            let (out, cache) = self.actor.forward(&rec.state.to_array())?;
            let policy = self.policy_from_output(&out)?;
            let log_prob = gaussian_log_prob(rec.raw_action, policy.mu, policy.sigma);
            let ratio = (log_prob - rec.log_prob).exp();
            if !ratio.is_finite() {
                stats.dropped += 1;
                continue;
            }
            stats.used += 1;
            ratio_sum += ratio;
            if (ratio - 1.0).abs() > eps {
                clipped += 1;
            }
            surrogate_sum += clipped_surrogate(ratio, rec.advantage, eps);
            let d_ratio = surrogate_ratio_grad(ratio, rec.advantage, eps);
            per_sample.push((cache, policy, rec.raw_action, d_ratio * ratio));
        }
        if stats.used == 0 {
            return Ok((0.0, grad, stats));
        }
        let n = stats.used as f64;
        for (cache, policy, action, d_logp) in per_sample {
            if d_logp == 0.0 {
                continue;
            }
            // loss = -mean(surrogate); d loss / d log_prob = -d_logp / n
            let scale = -d_logp / n;
            let z = (action - policy.mu) / policy.sigma;
            let d_mu = z / policy.sigma;
            let d_log_sigma = if policy.floored { 0.0 } else { z * z - 1.0 };
            let g = self
                .actor
                .backward(&cache, &[scale * d_mu, scale * d_log_sigma])?;
            grad.add_scaled(&g.params, 1.0);
        }
        stats.mean_ratio = ratio_sum / n;
        stats.clip_fraction = clipped as f64 / n;
        stats.surrogate = surrogate_sum / n;
        Ok((-stats.surrogate, grad, stats))
    }

    /// Mean squared error of the critic against `targets` and its gradient.
    pub fn critic_loss_and_grad(
        &self,
        states: &[StateObservation],
        targets: &[f64],
    ) -> Result<(f64, Mlp)> {
        check_len("critic targets", states.len(), targets.len())?;
        let mut grad = self.critic.zeros_like();
        if states.is_empty() {
            return Ok((0.0, grad));
        }
        let n = states.len() as f64;
        let mut loss = 0.0;
        for (s, target) in states.iter().zip(targets) {
            let (out, cache) = self.critic.forward(&s.to_array())?;
            let err = out[0] - target;
            loss += err * err;
            grad.add_scaled(&self.critic.backward(&cache, &[2.0 * err / n])?.params, 1.0);
        }
        Ok((loss / n, grad))
    }

    /// One optimizer step of the critic; returns the pre-step loss.
    pub fn critic_update(&mut self, states: &[StateObservation], targets: &[f64]) -> Result<f64> {
        let (loss, grad) = self.critic_loss_and_grad(states, targets)?;
        if loss.is_finite() {
            self.critic_opt.step(&mut self.critic, &grad)?;
        }
        Ok(loss)
    }

    /// Re-evaluates recorded log-probabilities and values under the current
    /// networks, e.g. after the buffer's states were adjusted.
    pub fn refresh_buffer(&self, buffer: &mut ReplayBuffer) -> Result<()> {
        for rec in buffer.records_mut() {
            let (log_prob, value) = self.evaluate(&rec.state, rec.raw_action)?;
            rec.log_prob = log_prob;
            rec.value = value;
        }
        Ok(())
    }

    /// Runs `update_epochs` clipped-surrogate passes on the actor and MSE passes
    /// on the critic, then clears the buffer.
    pub fn ppo_update(&mut self, buffer: &mut ReplayBuffer) -> Result<PpoDiagnostics> {
        let mut diag = PpoDiagnostics::default();
        if buffer.is_empty() {
            buffer.clear();
            return Ok(diag);
        }
        let states = buffer.states();
        let targets: Vec<f64> = buffer.records().iter().map(|r| r.return_to_go).collect();
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("returns in replay buffer".into()));
        }
        for _ in 0..self.config.update_epochs {
            let (_, actor_grad, mut stats) = self.actor_loss_and_grad(buffer.records())?;
            if stats.used > 0 {
                self.actor_opt.step(&mut self.actor, &actor_grad)?;
            }
            stats.critic_loss = self.critic_update(&states, &targets)?;
            diag.passes.push(stats);
        }
        if !(self.actor.all_finite() && self.critic.all_finite()) {
            return Err(Error::NonFinite("agent parameters after ppo update".into()));
        }
        buffer.clear();
        Ok(diag)
    }
}
