//! Categorical distributions and the log-based losses defined over them.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Floor applied inside every logarithm of a predicted probability.
pub const LOG_FLOOR: f64 = 1e-12;

/// Tolerance on the total mass of a [`ProbVector`].
pub const MASS_TOLERANCE: f64 = 1e-9;

/// A normalized categorical distribution over `k` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("probability vector must be non-empty"));
        }
        if let Some(bad) = values.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::domain(format!(
                "probability entries must be finite and non-negative, found {bad}"
            )));
        }
        let mass: f64 = values.iter().sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::domain(format!(
                "probability entries sum to {mass}, expected 1"
            )));
        }
        Ok(ProbVector(values))
    }

    pub fn one_hot(k: usize, class: usize) -> Result<Self> {
        if class >= k {
            return Err(Error::domain(format!(
                "class {class} out of range for {k} classes"
            )));
        }
        let mut v = vec![0.0; k];
        v[class] = 1.0;
        Ok(ProbVector(v))
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::domain(
                "uniform distribution needs at least one class",
            ));
        }
        Ok(ProbVector(vec![1.0 / k as f64; k]))
    }

    /// Convex combination `weight * a + (1 - weight) * b`.
    pub fn mix(a: &ProbVector, b: &ProbVector, weight: f64) -> Result<Self> {
        check_len("probability mix", a.len(), b.len())?;
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::domain(format!(
                "mixing weight {weight} outside [0, 1]"
            )));
        }
        let values =
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| weight * x + (1.0 - weight) * y)
                .collect();
        ProbVector::new(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ProbVector::new(values)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::domain("logit vector must be non-empty"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(())
}

pub(crate) fn check_temperature(temperature: f64) -> Result<()> {
    if temperature.is_finite() && temperature > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "temperature must be positive and finite, got {temperature}"
        )))
    }
}

/// `softmax(logits / temperature)`, stabilized by subtracting the max logit.
pub fn softmax_with_temperature(logits: &[f64], temperature: f64) -> Result<ProbVector> {
    check_temperature(temperature)?;
    check_logits(logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .map(|z| ((z - max) / temperature).exp())
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(ProbVector(out))
}

/// `KL(p || q) = sum p_i ln(p_i / q_i)` with `q` floored at [`LOG_FLOOR`].
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    check_len("kl divergence", p.len(), q.len())?;
    Ok(p.0
        .iter()
        .zip(&q.0)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.max(LOG_FLOOR).ln()))
        .sum())
}

/// Shannon entropy in nats; `0 ln 0 = 0`.
pub fn prediction_entropy(p: &ProbVector) -> f64 {
    -p.0.iter()
        .filter(|pi| **pi > 0.0)
        .map(|pi| pi * pi.ln())
        .sum::<f64>()
}

/// `-sum target_i ln(max(pred_i, LOG_FLOOR))`.
pub fn cross_entropy(target: &ProbVector, pred: &ProbVector) -> Result<f64> {
    check_len("cross entropy", target.len(), pred.len())?;
    Ok(-target
        .0
        .iter()
        .zip(&pred.0)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, q)| t * q.max(LOG_FLOOR).ln())
        .sum::<f64>())
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
