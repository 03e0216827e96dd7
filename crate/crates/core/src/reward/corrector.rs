use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::RewardConfig;
use crate::error::{check_len, Error, Result};
use crate::numkernel::{Matrix, Optimizer, Params, StepOutcome};
use crate::state::{StateObservation, STATE_DIM};

/// Per-step input: the three state components followed by the raw action.
pub const CORRECTOR_INPUT_DIM: usize = STATE_DIM + 1;

/// Cumulative predictions are snapped to multiples of 2^-40 within +-2^10, so
/// differences and their running sums are exact in `f64`.
const GRID: f64 = (1u64 << 40) as f64;
const PREDICTION_BOUND: f64 = 1024.0;

/// Below this root mean square the history counts as all-zero rewards.
const MIN_SCALE: f64 = 1e-12;

pub fn quantize_prediction(g: f64) -> f64 {
    (g.clamp(-PREDICTION_BOUND, PREDICTION_BOUND) * GRID).round() / GRID
}

/// One stored batch episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub inputs: Vec<[f64; CORRECTOR_INPUT_DIM]>,
    /// Terminal reward `r^b` (already warm-up scaled).
    pub reward: f64,
}

impl Episode {
    pub fn new(states: &[StateObservation], raw_actions: &[f64], reward: f64) -> Result<Self> {
        check_len("episode actions", states.len(), raw_actions.len())?;
        if states.is_empty() {
            return Err(Error::domain("episode must contain at least one step"));
        }
        let inputs = states
            .iter()
            .zip(raw_actions)
            .map(|(s, a)| {
                let [t, st, u] = s.to_array();
                [t, st, u, *a]
            })
            .collect();
        Ok(Episode { inputs, reward })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Elman recurrent network whose scalar head emits the increment of a
/// running return prediction:
///
/// ```text
/// h_t = tanh(W_x x_t + W_h h_{t-1} + b)
/// u_t = u_{t-1} + v . h_t + c + a_t (q . h_t + d),   u_0 = 0
/// g_t = sigma * u_t
/// ```
///
/// where `a_t` is the raw action. The gated term lets the credit of an action
/// depend on its context. The network works in units of `sigma`, the root mean square of the episode
/// rewards it was last trained on, so its step size does not depend on how
/// large batch rewards happen to be.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corrector {
    input_weight: Matrix,
    recurrent_weight: Matrix,
    bias: Vec<f64>,
    head: Vec<f64>,
    head_bias: Vec<f64>,
    action_head: Vec<f64>,
    action_bias: Vec<f64>,
    /// Not trained by gradient; refreshed from the history on every step.
    reward_scale: f64,
}

struct Trace {
    hidden: Vec<Vec<f64>>,
    cumulative: Vec<f64>,
}

impl Corrector {
    pub fn new<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::domain("corrector hidden size must be positive"));
        }
        let mut c = Corrector::zeros(hidden);
        let mut fill = |m: &mut [f64], scale: f64| {
            for w in m {
                let z: f64 = StandardNormal.sample(rng);
                *w = z * scale;
            }
        };
        fill(
            c.input_weight.as_mut_slice(),
            (1.0 / CORRECTOR_INPUT_DIM as f64).sqrt(),
        );
        fill(
            c.recurrent_weight.as_mut_slice(),
            (0.25 / hidden as f64).sqrt(),
        );
        fill(&mut c.head, 0.1 / (hidden as f64).sqrt());
        fill(&mut c.action_head, 0.1 / (hidden as f64).sqrt());
        Ok(c)
    }

    pub fn zeros(hidden: usize) -> Self {
        Corrector {
            input_weight: Matrix::zeros(hidden, CORRECTOR_INPUT_DIM),
            recurrent_weight: Matrix::zeros(hidden, hidden),
            bias: vec![0.0; hidden],
            head: vec![0.0; hidden],
            head_bias: vec![0.0],
            action_head: vec![0.0; hidden],
            action_bias: vec![0.0],
            reward_scale: 1.0,
        }
    }

    /// A corrector whose only non-zero parameter is the head bias, so every
    /// step adds `head_bias`.
    pub fn with_head_bias(hidden: usize, head_bias: f64) -> Self {
        let mut c = Corrector::zeros(hidden);
        c.head_bias[0] = head_bias;
        c
    }

    pub fn hidden_size(&self) -> usize {
        self.bias.len()
    }

    pub fn reward_scale(&self) -> f64 {
        self.reward_scale
    }

    /// Sets the unit of the predictions; non-positive or non-finite values
    /// fall back to 1.
    pub fn set_reward_scale(&mut self, scale: f64) {
        self.reward_scale = if scale.is_finite() && scale > 0.0 {
            scale
        } else {
            1.0
        };
    }

    fn increment(&self, h: &[f64], action: f64) -> f64 {
        let dot = |w: &[f64]| w.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
        dot(&self.head)
            + self.head_bias[0]
            + action * (dot(&self.action_head) + self.action_bias[0])
    }

    fn run(&self, episode: &Episode) -> Trace {
        let h_dim = self.hidden_size();
        let mut hidden = Vec::with_capacity(episode.len());
        let mut cumulative = Vec::with_capacity(episode.len());
        let mut h = vec![0.0; h_dim];
        let mut g = 0.0;
        for x in &episode.inputs {
            let from_input = self.input_weight.affine(x, &self.bias);
            let from_state = self.recurrent_weight.affine(&h, &vec![0.0; h_dim]);
            h = from_input
                .iter()
                .zip(&from_state)
                .map(|(a, b)| (a + b).tanh())
                .collect();
            g += self.increment(&h, x[STATE_DIM]);
            hidden.push(h.clone());
            cumulative.push(g);
        }
        Trace { hidden, cumulative }
    }

    /// Cumulative return predictions `g_1..g_n`.
    pub fn predict(&self, episode: &Episode) -> Vec<f64> {
        let mut g = self.run(episode).cumulative;
        g.iter_mut().for_each(|x| *x *= self.reward_scale);
        g
    }

    /// Corrector loss on one episode and its gradient (shaped like `self`),
    /// both in units of the reward scale.
    pub fn loss_and_grad(&self, episode: &Episode, config: &RewardConfig) -> (f64, Corrector) {
        let trace = self.run(episode);
        let n = episode.len();
        let reward = episode.reward / self.reward_scale;
        let returns = vec![reward; n];
        let loss = corrector_loss(&trace.cumulative, reward, &returns, config);

        // dL/dg_t, then suffix sums give dL/d(head output_t).
        let nf = n as f64;
        let mut d_g: Vec<f64> = trace
            .cumulative
            .iter()
            .zip(&returns)
            .map(|(g, ret)| 2.0 * config.beta_c / nf * (g - ret))
            .collect();
        d_g[n - 1] += 2.0 * config.alpha_c * (trace.cumulative[n - 1] - reward);
        let mut d_inc = vec![0.0; n];
        let mut acc = 0.0;
        for t in (0..n).rev() {
            acc += d_g[t];
            d_inc[t] = acc;
        }

        let h_dim = self.hidden_size();
        let mut grad = Corrector::zeros(h_dim);
        let mut carry = vec![0.0; h_dim];
        let zero = vec![0.0; h_dim];
        for t in (0..n).rev() {
            let h = &trace.hidden[t];
            let h_prev = if t == 0 { &zero } else { &trace.hidden[t - 1] };
            let a = episode.inputs[t][STATE_DIM];
            grad.head_bias[0] += d_inc[t];
            grad.action_bias[0] += d_inc[t] * a;
            for ((gv, gq), hj) in grad.head.iter_mut().zip(&mut grad.action_head).zip(h) {
                *gv += d_inc[t] * hj;
                *gq += d_inc[t] * a * hj;
            }
            let dz: Vec<f64> = (0..h_dim)
                .map(|j| {
                    let dh = (self.head[j] + a * self.action_head[j]) * d_inc[t] + carry[j];
                    dh * (1.0 - h[j] * h[j])
                })
                .collect();
            grad.input_weight.add_outer(&dz, &episode.inputs[t]);
            grad.recurrent_weight.add_outer(&dz, h_prev);
            grad.bias.iter_mut().zip(&dz).for_each(|(b, d)| *b += d);
            carry = self.recurrent_weight.transpose_mul(&dz);
        }
        (loss, grad)
    }
}

impl Params for Corrector {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            self.input_weight.as_slice(),
            self.recurrent_weight.as_slice(),
            &self.bias,
            &self.head,
            &self.head_bias,
            &self.action_head,
            &self.action_bias,
        ]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.input_weight.as_mut_slice(),
            self.recurrent_weight.as_mut_slice(),
            &mut self.bias,
            &mut self.head,
            &mut self.head_bias,
            &mut self.action_head,
            &mut self.action_bias,
        ]
    }
}

/// `alpha_c (g_n - r)^2 + beta_c / n * sum_i (g_i - G_i)^2`.
pub fn corrector_loss(
    cumulative: &[f64],
    terminal_reward: f64,
    returns: &[f64],
    config: &RewardConfig,
) -> f64 {
    let n = cumulative.len();
    if n == 0 {
        return 0.0;
    }
    let last = cumulative[n - 1] - terminal_reward;
    let per_step: f64 = cumulative
        .iter()
        .zip(returns)
        .map(|(g, ret)| (g - ret).powi(2))
        .sum();
    config.alpha_c * last * last + config.beta_c / n as f64 * per_step
}

/// One optimizer step on the mean corrector loss over episodes sampled from
/// `history`, after resetting the reward scale to the root mean square of all
/// rewards in `history`. Returns the pre-step mean loss; a non-finite loss
/// skips the step.
pub fn corrector_train_step<R: Rng + ?Sized>(
    history: &[Episode],
    corrector: &mut Corrector,
    optimizer: &mut Optimizer,
    config: &RewardConfig,
    rng: &mut R,
) -> Result<(f64, StepOutcome)> {
    if history.is_empty() {
        return Err(Error::domain(
            "corrector training needs at least one episode",
        ));
    }
    let mean_sq = history.iter().map(|e| e.reward * e.reward).sum::<f64>() / history.len() as f64;
    corrector.set_reward_scale(if mean_sq > MIN_SCALE * MIN_SCALE {
        mean_sq.sqrt()
    } else {
        1.0
    });
    let k = config.episodes_per_step.min(history.len());
    let picked: Vec<usize> = if k == history.len() {
        (0..k).collect()
    } else {
        sample(rng, history.len(), k).into_vec()
    };
    let mut grad = Corrector::zeros(corrector.hidden_size());
    let mut total = 0.0;
    let scale = 1.0 / k as f64;
    for i in picked {
        let (loss, g) = corrector.loss_and_grad(&history[i], config);
        total += loss;
        for (dst, src) in grad.param_slices_mut().into_iter().zip(g.param_slices()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
        }
    }
    let mean = total * scale;
    if !mean.is_finite() {
        return Ok((mean, StepOutcome::SkippedNonFinite));
    }
    let outcome = optimizer.step(corrector, &grad)?;
    Ok((mean, outcome))
}

/// Redistribution of one batch reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBatch {
    pub raw_reward: f64,
    pub shaped_reward: f64,
    pub per_instance_rewards: Vec<f64>,
    pub cumulative_predictions: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RewardBatch {
    /// True when the per-instance rewards, summed in order, reproduce the
    /// final cumulative prediction bit for bit.
    pub fn telescopes(&self) -> bool {
        let total = self.per_instance_rewards.iter().fold(0.0, |acc, r| acc + r);
        self.cumulative_predictions
            .last()
            .is_some_and(|g| g.to_bits() == total.to_bits() || (*g == 0.0 && total == 0.0))
    }
}

/// First differences `g_i - g_{i-1}` with `g_0 = 0`.
pub fn redistribute(cumulative: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    cumulative
        .iter()
        .map(|g| {
            let r = g - prev;
            prev = *g;
            r
        })
        .collect()
}

/// Per-instance rewards as first differences of the corrector's cumulative
/// predictions. Every step's return is the shaped batch reward.
pub fn calibrate_rewards(
    states: &[StateObservation],
    raw_actions: &[f64],
    raw_reward: f64,
    shaped_reward: f64,
    corrector: &Corrector,
) -> Result<RewardBatch> {
    let episode = Episode::new(states, raw_actions, shaped_reward)?;
    let cumulative: Vec<f64> = corrector.predict(&episode);
    if cumulative.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("corrector output".into()));
    }
    let cumulative: Vec<f64> = cumulative.into_iter().map(quantize_prediction).collect();
    Ok(RewardBatch {
        raw_reward,
        shaped_reward,
        per_instance_rewards: redistribute(&cumulative),
        cumulative_predictions: cumulative,
        returns: vec![shaped_reward; states.len()],
    })
}
