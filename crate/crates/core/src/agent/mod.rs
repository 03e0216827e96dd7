//! Gaussian-policy PPO actor-critic that emits one temperature per instance.
//!
//! The actor maps a [`StateObservation`] to `(mu, log_sigma)`. A raw action
//! is drawn from `Normal(mu, sigma^2)` and squashed to a temperature with
//! [`temperature_of`]. Log-densities always refer to the raw, pre-squash
//! sample, so the PPO ratio is a plain Gaussian density ratio.

mod buffer;
mod ppo;

pub use buffer::{compute_advantages, discounted_return, gae, ReplayBuffer, TransitionRecord};
pub use ppo::{clipped_surrogate, PassStats, PpoDiagnostics};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distill::MAX_TEMPERATURE;
use crate::error::{Error, Result};
use crate::numkernel::{sigmoid, Activation, Mlp, Optimizer, OptimizerKind};
use crate::state::{StateObservation, STATE_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub clip_epsilon: f64,
    pub gae_lambda: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub update_epochs: usize,
    pub sigma_floor: f64,
    pub hidden: Vec<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            clip_epsilon: 0.2,
            gae_lambda: 0.95,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            update_epochs: 4,
            sigma_floor: 0.05,
            hidden: vec![64, 64],
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo.{m}")));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !(self.sigma_floor > 0.0 && self.sigma_floor.is_finite()) {
            return bad("sigma_floor must be positive");
        }
        if self.update_epochs == 0 {
            return bad("update_epochs must be at least 1");
        }
        if !(self.actor_lr >= 0.0 && self.critic_lr >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if self.hidden.contains(&0) {
            return bad("hidden sizes must be positive");
        }
        Ok(())
    }
}

/// Maps a raw Gaussian action to a temperature in the open interval `(0, 10)`.
pub fn temperature_of(raw_action: f64) -> f64 {
    (MAX_TEMPERATURE * sigmoid(raw_action)).clamp(f64::MIN_POSITIVE, MAX_TEMPERATURE.next_down())
}

/// Log-density of `Normal(mu, sigma^2)` at `x`.
pub fn gaussian_log_prob(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Policy {
    pub mu: f64,
    pub log_sigma: f64,
    pub sigma: f64,
    /// True when `exp(log_sigma)` fell below the floor.
    pub floored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub raw_action: f64,
    pub mu: f64,
    pub sigma: f64,
    pub log_prob: f64,
    pub value: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    actor: Mlp,
    critic: Mlp,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    config: PpoConfig,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(config: PpoConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let sizes = |out: usize| {
            std::iter::once(STATE_DIM)
                .chain(config.hidden.iter().copied())
                .chain(std::iter::once(out))
                .collect::<Vec<_>>()
        };
        let mut actor = Mlp::new(&sizes(2), Activation::Relu, rng)?;
        actor.scale_output_layer(0.01);
        let mut critic = Mlp::new(&sizes(1), Activation::Relu, rng)?;
        critic.scale_output_layer(0.1);
        Agent::from_parts(actor, critic, config)
    }

    pub fn from_parts(actor: Mlp, critic: Mlp, config: PpoConfig) -> Result<Self> {
        config.validate()?;
        if actor.input_dim() != STATE_DIM || actor.output_dim() != 2 {
            return Err(Error::domain(
                "actor must map a 3-vector state to (mu, log_sigma)",
            ));
        }
        if critic.input_dim() != STATE_DIM || critic.output_dim() != 1 {
            return Err(Error::domain(
                "critic must map a 3-vector state to a scalar",
            ));
        }
        Ok(Agent {
            actor,
            critic,
            actor_opt: Optimizer::new(OptimizerKind::adam(), config.actor_lr)?,
            critic_opt: Optimizer::new(OptimizerKind::adam(), config.critic_lr)?,
            config,
        })
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critic_mut(&mut self) -> &mut Mlp {
        &mut self.critic
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }

    pub(crate) fn policy_from_output(&self, out: &[f64]) -> Result<Policy> {
        let (mu, log_sigma) = (out[0], out[1]);
        if !(mu.is_finite() && log_sigma.is_finite()) {
            return Err(Error::NonFinite(format!(
                "actor output (mu={mu}, log_sigma={log_sigma})"
            )));
        }
        let raw_sigma = log_sigma.exp();
        let floored = raw_sigma < self.config.sigma_floor;
        Ok(Policy {
            mu,
            log_sigma,
            sigma: if floored {
                self.config.sigma_floor
            } else {
                raw_sigma
            },
            floored,
        })
    }

    pub fn policy(&self, state: &StateObservation) -> Result<Policy> {
        let out = self.actor.predict(&state.to_array())?;
        self.policy_from_output(&out)
    }

    pub fn value(&self, state: &StateObservation) -> Result<f64> {
        let v = self.critic.predict(&state.to_array())?[0];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("critic output".into()))
        }
    }

    /// Samples a temperature for `state`.
    pub fn act<R: Rng + ?Sized>(&self, state: &StateObservation, rng: &mut R) -> Result<Action> {
        let noise: f64 = StandardNormal.sample(rng);
        self.act_with_noise(state, noise)
    }

    /// Like [`Agent::act`] with the standard-normal draw supplied by the caller.
    pub fn act_with_noise(&self, state: &StateObservation, noise: f64) -> Result<Action> {
        let policy = self.policy(state)?;
        let raw_action = policy.mu + policy.sigma * noise;
        Ok(Action {
            raw_action,
            mu: policy.mu,
            sigma: policy.sigma,
            log_prob: gaussian_log_prob(raw_action, policy.mu, policy.sigma),
            value: self.value(state)?,
            temperature: temperature_of(raw_action),
        })
    }

    /// Log-density of `raw_action` and critic value under the current networks.
    pub fn evaluate(&self, state: &StateObservation, raw_action: f64) -> Result<(f64, f64)> {
        let policy = self.policy(state)?;
        Ok((
            gaussian_log_prob(raw_action, policy.mu, policy.sigma),
            self.value(state)?,
        ))
    }
}
