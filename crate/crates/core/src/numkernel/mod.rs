//! Numeric substrate: dense networks, temperature softmax, log-based losses
//! and first-order optimizers. Everything is `f64`.

mod mlp;
mod optim;
mod params;
mod prob;

pub use mlp::{Activation, ForwardCache, Gradients, Layer, Matrix, Mlp};
pub use optim::{Optimizer, OptimizerKind, StepOutcome};
pub use params::Params;
pub use prob::{
    argmax, cross_entropy, kl_divergence, prediction_entropy, softmax_with_temperature, ProbVector,
    LOG_FLOOR, MASS_TOLERANCE,
};
pub(crate) use prob::{check_logits, check_temperature};

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
