use serde::{Deserialize, Serialize};

use super::params::Params;
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd_momentum() -> Self {
        OptimizerKind::Sgd { momentum: 0.9 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::sgd_momentum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient entry was NaN or infinite; parameters and state are untouched.
    SkippedNonFinite,
}

/// First-order optimizer with per-parameter accumulators.
///
/// Accumulators are allocated on the first step and must keep matching the
/// model's shape afterwards.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
    skipped: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate >= 0.0) {
            return Err(Error::domain(format!(
                "learning rate must be finite and non-negative, got {learning_rate}"
            )));
        }
        Ok(Optimizer {
            kind,
            learning_rate,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
            skipped: 0,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    fn ensure_state<P: Params>(&mut self, model: &P) -> Result<()> {
        let shapes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
        if self.first.is_empty() {
            self.first = shapes.iter().map(|n| vec![0.0; *n]).collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.second = self.first.clone();
            }
            return Ok(());
        }
        check_len("optimizer state", self.first.len(), shapes.len())?;
        for (acc, n) in self.first.iter().zip(&shapes) {
            check_len("optimizer state", acc.len(), *n)?;
        }
        Ok(())
    }

    pub fn step<P: Params>(&mut self, model: &mut P, grads: &P) -> Result<StepOutcome> {
        let grad_slices = grads.param_slices();
        {
            let model_slices = model.param_slices();
            check_len("gradient slices", model_slices.len(), grad_slices.len())?;
            for (m, g) in model_slices.iter().zip(&grad_slices) {
                check_len("gradient", m.len(), g.len())?;
            }
        }
        if !grads.all_finite() {
            self.skipped += 1;
            return Ok(StepOutcome::SkippedNonFinite);
        }
        self.ensure_state(model)?;
        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                for ((p, g), v) in model
                    .param_slices_mut()
                    .into_iter()
                    .zip(&grad_slices)
                    .zip(&mut self.first)
                {
                    for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                        *vi = momentum * *vi + gi;
                        *pi -= lr * *vi;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in model
                    .param_slices_mut()
                    .into_iter()
                    .zip(&grad_slices)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((pi, gi), mi), vi) in p
                        .iter_mut()
                        .zip(g.iter())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        *pi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(StepOutcome::Applied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::{cross_entropy, softmax_with_temperature, Activation, Mlp, ProbVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut w = vec![1.0, -2.0];
        let mut opt = Optimizer::new(OptimizerKind::sgd_momentum(), 0.1).unwrap();
        opt.step(&mut w, &vec![0.0, 0.0]).unwrap();
        assert_eq!(w, vec![1.0, -2.0]);
    }

    #[test]
    fn plain_descent_on_square() {
        let mut w = vec![1.0];
        let mut opt = Optimizer::new(OptimizerKind::Sgd { momentum: 0.0 }, 0.1).unwrap();
        let g = vec![2.0 * w[0]];
        opt.step(&mut w, &g).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut w = vec![1.0];
        let mut opt = Optimizer::new(OptimizerKind::adam(), 0.1).unwrap();
        let out = opt.step(&mut w, &vec![f64::NAN]).unwrap();
        assert_eq!(out, StepOutcome::SkippedNonFinite);
        assert_eq!(w, vec![1.0]);
        assert_eq!(opt.skipped(), 1);
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut w = vec![1.0, 2.0];
        let mut opt = Optimizer::new(OptimizerKind::sgd_momentum(), 0.1).unwrap();
        assert!(opt.step(&mut w, &vec![1.0]).is_err());
        opt.step(&mut w, &vec![1.0, 1.0]).unwrap();
        let mut other = vec![1.0, 2.0, 3.0];
        assert!(opt.step(&mut other, &vec![0.0; 3]).is_err());
    }

    #[test]
    fn small_steps_do_not_increase_convex_loss() {
        for kind in [OptimizerKind::sgd_momentum(), OptimizerKind::adam()] {
            let mut w = vec![3.0, -1.5];
            // Heavy-ball momentum 0.9 is monotone only while lr * curvature < (1 - sqrt(0.9))^2.
            let mut opt = Optimizer::new(kind, 1e-4).unwrap();
            let loss = |w: &[f64]| w[0] * w[0] + 4.0 * w[1] * w[1];
            let mut last = loss(&w);
            for _ in 0..20 {
                let g = vec![2.0 * w[0], 8.0 * w[1]];
                opt.step(&mut w, &g).unwrap();
                let now = loss(&w);
                assert!(now <= last);
                last = now;
            }
        }
    }

    #[test]
    fn separates_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let data: Vec<([f64; 2], usize)> = (0..100)
            .map(|i| {
                let c = i % 2;
                let centre = if c == 0 { -2.0 } else { 2.0 };
                (
                    [
                        centre + noise.sample(&mut rng),
                        centre + noise.sample(&mut rng),
                    ],
                    c,
                )
            })
            .collect();
        let mut model = Mlp::new(&[2, 2], Activation::Relu, &mut rng).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::sgd_momentum(), 0.05).unwrap();
        for _ in 0..50 {
            let mut grad = model.zeros_like();
            for (x, y) in &data {
                let (logits, cache) = model.forward(x).unwrap();
                let p = softmax_with_temperature(&logits, 1.0).unwrap();
                let target = ProbVector::one_hot(2, *y).unwrap();
                assert!(cross_entropy(&target, &p).unwrap().is_finite());
                let dz: Vec<f64> = p
                    .as_slice()
                    .iter()
                    .zip(target.as_slice())
                    .map(|(a, b)| (a - b) / data.len() as f64)
                    .collect();
                grad.add_scaled(&model.backward(&cache, &dz).unwrap().params, 1.0);
            }
            opt.step(&mut model, &grad).unwrap();
        }
        let correct = data
            .iter()
            .filter(|(x, y)| {
                let z = model.predict(x).unwrap();
                crate::numkernel::argmax(&z) == *y
            })
            .count();
        assert_eq!(correct, data.len());
    }
}
