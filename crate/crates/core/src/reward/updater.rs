use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::numkernel::{Activation, Mlp, Optimizer, OptimizerKind, Params, StepOutcome};
use crate::state::{StateObservation, STATE_DIM};

/// Learned state correction `s' = clamp(s + U(s), 0, 1)` trained jointly
/// with a return estimator `E` on `(E(s') - G)^2`.
///
/// `U`'s output layer starts at zero, so the correction starts as the identity.
#[derive(Debug, Clone)]
pub struct StateAdjuster {
    updater: Mlp,
    estimator: Mlp,
    updater_opt: Optimizer,
    estimator_opt: Optimizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateUpdate {
    pub states: Vec<StateObservation>,
    /// Mean loss before the step.
    pub loss: f64,
    pub applied: bool,
}

impl StateAdjuster {
    pub fn new<R: Rng + ?Sized>(hidden: usize, learning_rate: f64, rng: &mut R) -> Result<Self> {
        let mut updater = Mlp::new(&[STATE_DIM, hidden, STATE_DIM], Activation::Tanh, rng)?;
        updater.scale_output_layer(0.0);
        let estimator = Mlp::new(&[STATE_DIM, hidden, 1], Activation::Tanh, rng)?;
        StateAdjuster::from_parts(updater, estimator, learning_rate)
    }

    pub fn from_parts(updater: Mlp, estimator: Mlp, learning_rate: f64) -> Result<Self> {
        if updater.input_dim() != STATE_DIM || updater.output_dim() != STATE_DIM {
            return Err(Error::domain(
                "state updater must map 3-vectors to 3-vectors",
            ));
        }
        if estimator.input_dim() != STATE_DIM || estimator.output_dim() != 1 {
            return Err(Error::domain(
                "return estimator must map 3-vectors to a scalar",
            ));
        }
        Ok(StateAdjuster {
            updater,
            estimator,
            updater_opt: Optimizer::new(OptimizerKind::adam(), learning_rate)?,
            estimator_opt: Optimizer::new(OptimizerKind::adam(), learning_rate)?,
        })
    }

    pub fn updater(&self) -> &Mlp {
        &self.updater
    }

    pub fn estimator(&self) -> &Mlp {
        &self.estimator
    }

    pub fn updater_mut(&mut self) -> &mut Mlp {
        &mut self.updater
    }

    pub fn estimator_mut(&mut self) -> &mut Mlp {
        &mut self.estimator
    }

    pub fn adjust(&self, state: &StateObservation) -> Result<StateObservation> {
        let s = state.to_array();
        let delta = self.updater.predict(&s)?;
        let raw: Vec<f64> = s.iter().zip(&delta).map(|(a, d)| a + d).collect();
        Ok(StateObservation::from_slice(&raw)?.clamped())
    }

    /// Mean `(E(clamp(s + U(s))) - G)^2` with gradients for `U` and `E`.
    pub fn loss_and_grads(
        &self,
        states: &[StateObservation],
        returns: &[f64],
    ) -> Result<(f64, Mlp, Mlp)> {
        check_len("state updater returns", states.len(), returns.len())?;
        let mut g_u = self.updater.zeros_like();
        let mut g_e = self.estimator.zeros_like();
        if states.is_empty() {
            return Ok((0.0, g_u, g_e));
        }
        let n = states.len() as f64;
        let mut loss = 0.0;
        for (state, ret) in states.iter().zip(returns) {
            let s = state.to_array();
            let (delta, u_cache) = self.updater.forward(&s)?;
            let raw: Vec<f64> = s.iter().zip(&delta).map(|(a, d)| a + d).collect();
            let adjusted: Vec<f64> = raw.iter().map(|x| x.clamp(0.0, 1.0)).collect();
            let (est, e_cache) = self.estimator.forward(&adjusted)?;
            let err = est[0] - ret;
            loss += err * err;
            let e_back = self.estimator.backward(&e_cache, &[2.0 * err / n])?;
            g_e.add_scaled(&e_back.params, 1.0);
            let d_delta: Vec<f64> = e_back
                .input
                .iter()
                .zip(&raw)
                .map(|(g, x)| if (0.0..=1.0).contains(x) { *g } else { 0.0 })
                .collect();
            g_u.add_scaled(&self.updater.backward(&u_cache, &d_delta)?.params, 1.0);
        }
        Ok((loss / n, g_u, g_e))
    }

    /// One joint step on `U` and `E`, then the adjusted states. A non-finite
    /// loss leaves the models alone and returns the original states.
    pub fn update_states(
        &mut self,
        states: &[StateObservation],
        returns: &[f64],
    ) -> Result<StateUpdate> {
        let (loss, g_u, g_e) = self.loss_and_grads(states, returns)?;
        if !loss.is_finite() || !g_u.all_finite() || !g_e.all_finite() {
            return Ok(StateUpdate {
                states: states.to_vec(),
                loss,
                applied: false,
            });
        }
        let a = self.updater_opt.step(&mut self.updater, &g_u)?;
        let b = self.estimator_opt.step(&mut self.estimator, &g_e)?;
        let adjusted = states
            .iter()
            .map(|s| self.adjust(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(StateUpdate {
            states: adjusted,
            loss,
            applied: a == StepOutcome::Applied && b == StepOutcome::Applied,
        })
    }
}
