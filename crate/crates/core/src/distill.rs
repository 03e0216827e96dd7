//! Teacher training and the knowledge-distillation loss with a temperature
//! per instance.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numkernel::{
    argmax, check_logits, check_temperature, cross_entropy, kl_divergence,
    softmax_with_temperature, Activation, Mlp, Optimizer, OptimizerKind, ProbVector, StepOutcome,
};

/// Largest temperature the controller can emit.
pub const MAX_TEMPERATURE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdConfig {
    /// Weight of the hard-label cross-entropy term.
    pub alpha: f64,
    /// Temperature used by the fixed-temperature baseline.
    pub default_temperature: f64,
    pub student_lr: f64,
    pub teacher_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for KdConfig {
    fn default() -> Self {
        KdConfig {
            alpha: 0.5,
            default_temperature: 4.0,
            student_lr: 0.05,
            teacher_lr: 0.05,
            momentum: 0.9,
            batch_size: 32,
        }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "kd.alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("kd.batch_size must be at least 1".into()));
        }
        if !(self.default_temperature > 0.0 && self.default_temperature <= MAX_TEMPERATURE) {
            return Err(Error::Config(format!(
                "kd.default_temperature {} outside (0, {MAX_TEMPERATURE}]",
                self.default_temperature
            )));
        }
        for (name, lr) in [
            ("student_lr", self.student_lr),
            ("teacher_lr", self.teacher_lr),
        ] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!("kd.{name} must be non-negative")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("kd.momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self, learning_rate: f64) -> Result<Optimizer> {
        Optimizer::new(
            OptimizerKind::Sgd {
                momentum: self.momentum,
            },
            learning_rate,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub features: Vec<f64>,
    pub label: usize,
    /// Present only for mixed instances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_label: Option<ProbVector>,
}

impl LabeledInstance {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        LabeledInstance {
            features,
            label,
            soft_label: None,
        }
    }

    pub fn target(&self) -> Target<'_> {
        match &self.soft_label {
            Some(p) => Target::Soft(p),
            None => Target::Label(self.label),
        }
    }
}

/// Supervision for the hard-label term.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Label(usize),
    Soft(&'a ProbVector),
}

impl Target<'_> {
    fn to_prob(self, k: usize) -> Result<ProbVector> {
        match self {
            Target::Label(c) => ProbVector::one_hot(k, c),
            Target::Soft(p) => {
                check_len("soft label", k, p.len())?;
                Ok(p.clone())
            }
        }
    }
}

/// `alpha * CE(target, softmax(s)) + (1 - alpha) * T^2 * KL(softmax(t / T) || softmax(s / T))`.
pub fn kd_loss_per_instance(
    student_logits: &[f64],
    teacher_logits: &[f64],
    target: Target<'_>,
    temperature: f64,
    alpha: f64,
) -> Result<f64> {
    kd_loss_and_grad(student_logits, teacher_logits, target, temperature, alpha).map(|(l, _)| l)
}

/// KD loss together with its gradient with respect to the student logits.
///
/// The teacher side is a constant. The gradient of the distillation term is
/// `(1 - alpha) * T * (softmax(s / T) - softmax(t / T))`.
pub fn kd_loss_and_grad(
    student_logits: &[f64],
    teacher_logits: &[f64],
    target: Target<'_>,
    temperature: f64,
    alpha: f64,
) -> Result<(f64, Vec<f64>)> {
    check_temperature(temperature)?;
    check_logits(student_logits)?;
    check_logits(teacher_logits)?;
    check_len("kd logits", student_logits.len(), teacher_logits.len())?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::domain(format!("alpha {alpha} outside [0, 1]")));
    }
    let k = student_logits.len();
    let target = target.to_prob(k)?;

    let student_hard = softmax_with_temperature(student_logits, 1.0)?;
    let student_soft = softmax_with_temperature(student_logits, temperature)?;
    let teacher_soft = softmax_with_temperature(teacher_logits, temperature)?;

    let ce = cross_entropy(&target, &student_hard)?;
    let kl = kl_divergence(&teacher_soft, &student_soft)?;
    let t2 = temperature * temperature;
    let loss = alpha * ce + (1.0 - alpha) * t2 * kl;

    let grad = (0..k)
        .map(|i| {
            alpha * (student_hard[i] - target[i])
                + (1.0 - alpha) * temperature * (student_soft[i] - teacher_soft[i])
        })
        .collect();
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentStep {
    /// Mean per-instance loss before the update.
    pub mean_loss: f64,
    /// False when the loss or gradient was non-finite and nothing changed.
    pub applied: bool,
}

/// One optimizer step on the mean KD loss of `batch`, instance `i` softened
/// at `temperatures[i]`.
pub fn student_update_step(
    student: &mut Mlp,
    optimizer: &mut Optimizer,
    batch: &[LabeledInstance],
    teacher_logits: &[&[f64]],
    temperatures: &[f64],
    config: &KdConfig,
) -> Result<StudentStep> {
    check_len(
        "teacher logits per batch",
        batch.len(),
        teacher_logits.len(),
    )?;
    check_len("temperatures per batch", batch.len(), temperatures.len())?;
    if batch.is_empty() {
        return Err(Error::domain("student update on an empty batch"));
    }
    if let Some(t) = temperatures
        .iter()
        .find(|t| !(**t > 0.0 && **t <= MAX_TEMPERATURE))
    {
        return Err(Error::domain(format!(
            "instance temperature {t} outside (0, {MAX_TEMPERATURE}]"
        )));
    }
    let n = batch.len() as f64;
    let mut grad = student.zeros_like();
    let mut total = 0.0;
    for ((inst, teacher), t) in batch.iter().zip(teacher_logits).zip(temperatures) {
        let (logits, cache) = student.forward(&inst.features)?;
        if logits.iter().any(|z| !z.is_finite()) {
            return Ok(StudentStep {
                mean_loss: f64::NAN,
                applied: false,
            });
        }
        let (loss, dz) = kd_loss_and_grad(&logits, teacher, inst.target(), *t, config.alpha)?;
        total += loss;
        let dz: Vec<f64> = dz.into_iter().map(|g| g / n).collect();
        grad.add_scaled(&student.backward(&cache, &dz)?.params, 1.0);
    }
    let mean_loss = total / n;
    if !mean_loss.is_finite() {
        return Ok(StudentStep {
            mean_loss,
            applied: false,
        });
    }
    let outcome = optimizer.step(student, &grad)?;
    Ok(StudentStep {
        mean_loss,
        applied: outcome == StepOutcome::Applied,
    })
}

/// Mean temperature-1 cross-entropy and accuracy of `model` on `data`.
pub fn evaluate(model: &Mlp, data: &[LabeledInstance]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::domain("evaluation on an empty set"));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for inst in data {
        let logits = model.predict(&inst.features)?;
        let p = softmax_with_temperature(&logits, 1.0)?;
        let target = inst.target().to_prob(logits.len())?;
        loss += cross_entropy(&target, &p)?;
        if argmax(&logits) == inst.label {
            correct += 1;
        }
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Hidden layers use the rectifier; the output layer is linear.
pub fn init_network<R: Rng + ?Sized>(
    input_dim: usize,
    hidden: &[usize],
    classes: usize,
    rng: &mut R,
) -> Result<Mlp> {
    let sizes: Vec<usize> = std::iter::once(input_dim)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(classes))
        .collect();
    Mlp::new(&sizes, Activation::Relu, rng)
}

/// Supervised cross-entropy training of the teacher.
///
/// With `epochs == 0` the seeded initialization is returned unchanged.
pub fn train_teacher<R: Rng + ?Sized>(
    data: &[LabeledInstance],
    hidden: &[usize],
    classes: usize,
    epochs: usize,
    config: &KdConfig,
    init_rng: &mut R,
    shuffle_rng: &mut R,
) -> Result<Mlp> {
    let input_dim = data
        .first()
        .map(|d| d.features.len())
        .ok_or_else(|| Error::domain("teacher training set is empty"))?;
    let mut teacher = init_network(input_dim, hidden, classes, init_rng)?;
    let mut opt = config.optimizer(config.teacher_lr)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(shuffle_rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let n = chunk.len() as f64;
            let mut grad = teacher.zeros_like();
            let mut total = 0.0;
            for &i in chunk {
                let inst = &data[i];
                let (logits, cache) = teacher.forward(&inst.features)?;
                let p = softmax_with_temperature(&logits, 1.0).map_err(|e| {
                    Error::NonFinite(format!("teacher diverged at epoch {epoch}, batch {b}: {e}"))
                })?;
                let target = inst.target().to_prob(classes)?;
                total += cross_entropy(&target, &p)?;
                let dz: Vec<f64> = (0..classes).map(|c| (p[c] - target[c]) / n).collect();
                grad.add_scaled(&teacher.backward(&cache, &dz)?.params, 1.0);
            }
            if !total.is_finite() || opt.step(&mut teacher, &grad)? != StepOutcome::Applied {
                return Err(Error::NonFinite(format!(
                    "teacher loss diverged at epoch {epoch}, batch {b}"
                )));
            }
        }
    }
    Ok(teacher)
}
