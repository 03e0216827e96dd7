//! The agent's view of one instance: teacher confidence, student confidence
//! and the student's margin-based uncertainty.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numkernel::{argmax, ProbVector};

/// Value substituted for the uncertainty component when it is ablated.
pub const ABLATED_UNCERTAINTY: f64 = 0.5;

pub const STATE_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateObservation {
    pub teacher_confidence: f64,
    pub student_confidence: f64,
    pub uncertainty: f64,
}

impl StateObservation {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.teacher_confidence,
            self.student_confidence,
            self.uncertainty,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        check_len("state vector", STATE_DIM, v.len())?;
        Ok(StateObservation {
            teacher_confidence: v[0],
            student_confidence: v[1],
            uncertainty: v[2],
        })
    }

    /// Every component is finite and inside `[0, 1]`.
    pub fn is_valid(&self) -> bool {
        self.to_array()
            .iter()
            .all(|x| x.is_finite() && (0.0..=1.0).contains(x))
    }

    pub fn clamped(&self) -> Self {
        let c = |x: f64| x.clamp(0.0, 1.0);
        StateObservation {
            teacher_confidence: c(self.teacher_confidence),
            student_confidence: c(self.student_confidence),
            uncertainty: c(self.uncertainty),
        }
    }
}

/// Arg-max class and its probability; ties go to the lowest index.
pub fn predict_class(probs: &ProbVector) -> (usize, f64) {
    let i = argmax(probs.as_slice());
    (i, probs[i])
}

/// One minus the gap between the top and the runner-up probability.
pub fn uncertainty_score(probs: &ProbVector) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::domain("uncertainty needs at least two classes"));
    }
    let (top, p_top) = predict_class(probs);
    let runner_up = probs
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != top)
        .map(|(_, p)| *p)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((1.0 - (p_top - runner_up)).clamp(0.0, 1.0))
}

/// Builds the observation from temperature-1 distributions of both networks.
pub fn build_state(
    teacher_probs: &ProbVector,
    student_probs: &ProbVector,
    uncertainty_enabled: bool,
) -> Result<StateObservation> {
    check_len(
        "state distributions",
        teacher_probs.len(),
        student_probs.len(),
    )?;
    let uncertainty = if uncertainty_enabled {
        uncertainty_score(student_probs)?
    } else {
        ABLATED_UNCERTAINTY
    };
    Ok(StateObservation {
        teacher_confidence: predict_class(teacher_probs).1,
        student_confidence: predict_class(student_probs).1,
        uncertainty,
    })
}
