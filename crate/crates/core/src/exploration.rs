//! Entropy-ranked exploration: rank training instances by the student's
//! predictive entropy, pick a high and a mid band, mix them pairwise and
//! let the agent practise on the mixture during the first epochs.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{CycleReport, RlkdController};
use crate::distill::{student_update_step, KdConfig, LabeledInstance};
use crate::error::{check_len, Error, Result};
use crate::numkernel::{prediction_entropy, softmax_with_temperature, Mlp, Optimizer, ProbVector};
use crate::reward::measure_batch_reward;

/// Half-open band of rank fractions `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub start: f64,
    pub end: f64,
}

impl Band {
    pub const fn new(start: f64, end: f64) -> Self {
        Band { start, end }
    }

    /// Rank positions `[floor(start * n), floor(end * n))`.
    pub fn ranks(&self, n: usize) -> std::ops::Range<usize> {
        let lo = (self.start * n as f64).floor() as usize;
        let hi = (self.end * n as f64).floor() as usize;
        lo..hi.max(lo)
    }

    fn overlaps(&self, other: &Band) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationConfig {
    /// Exploration runs while `epoch < phase_epochs`; `None` follows the
    /// reward warm-up length.
    pub phase_epochs: Option<usize>,
    /// Weight of the high band in each mixed pair.
    pub lambda_mix: f64,
    pub band_high: Band,
    pub band_low: Band,
    pub extra_steps_per_batch: usize,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig {
            phase_epochs: None,
            lambda_mix: 0.7,
            band_high: Band::new(0.10, 0.20),
            band_low: Band::new(0.40, 0.50),
            extra_steps_per_batch: 1,
        }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_mix > 0.5 && self.lambda_mix <= 1.0) {
            return Err(Error::Config(format!(
                "exploration.lambda_mix {} outside (0.5, 1]",
                self.lambda_mix
            )));
        }
        for band in [self.band_high, self.band_low] {
            if !(0.0 <= band.start && band.start < band.end && band.end <= 1.0) {
                return Err(Error::Config(format!(
                    "exploration band [{}, {}) must satisfy 0 <= start < end <= 1",
                    band.start, band.end
                )));
            }
        }
        if self.band_high.overlaps(&self.band_low) {
            return Err(Error::Config("exploration bands overlap".into()));
        }
        if self.phase_epochs == Some(0) {
            return Err(Error::Config(
                "exploration.phase_epochs must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn resolved_phase_epochs(&self, warmup_n: usize) -> usize {
        self.phase_epochs.unwrap_or(warmup_n)
    }
}

/// Dataset indices sorted by descending student entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRanking {
    pub order: Vec<usize>,
    /// `entropies[i]` belongs to `order[i]`.
    pub entropies: Vec<f64>,
    pub epoch_computed: usize,
}

impl EntropyRanking {
    /// Sorts per-instance entropies descending, ties by index ascending.
    pub fn from_entropies(entropies: &[f64], epoch: usize) -> Result<Self> {
        if entropies.iter().any(|h| !h.is_finite()) {
            return Err(Error::NonFinite("instance entropies".into()));
        }
        let mut order: Vec<usize> = (0..entropies.len()).collect();
        order.sort_by(|a, b| entropies[*b].total_cmp(&entropies[*a]).then(a.cmp(b)));
        Ok(EntropyRanking {
            entropies: order.iter().map(|i| entropies[*i]).collect(),
            order,
            epoch_computed: epoch,
        })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Ranks every instance by the entropy of the student's temperature-1 prediction.
pub fn rank_by_entropy(
    data: &[LabeledInstance],
    student: &Mlp,
    epoch: usize,
) -> Result<EntropyRanking> {
    if data.is_empty() {
        return Err(Error::domain("cannot rank an empty dataset"));
    }
    let entropies = data
        .iter()
        .map(|inst| {
            let logits = student.predict(&inst.features)?;
            Ok(prediction_entropy(&softmax_with_temperature(&logits, 1.0)?))
        })
        .collect::<Result<Vec<f64>>>()?;
    EntropyRanking::from_entropies(&entropies, epoch)
}

/// Dataset indices of the two bands, trimmed to equal length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bands {
    pub high: Vec<usize>,
    pub low: Vec<usize>,
}

pub fn select_bands(ranking: &EntropyRanking, config: &ExplorationConfig) -> Result<Bands> {
    let n = ranking.len();
    if n < 10 {
        return Err(Error::domain(format!(
            "band selection needs at least 10 instances, got {n}"
        )));
    }
    let high = config.band_high.ranks(n);
    let low = config.band_low.ranks(n);
    let size = high.len().min(low.len());
    if size == 0 {
        return Err(Error::domain(format!("bands are empty for {n} instances")));
    }
    Ok(Bands {
        high: ranking.order[high.start..high.start + size].to_vec(),
        low: ranking.order[low.start..low.start + size].to_vec(),
    })
}

/// A mixed instance with the teacher's logits on the mixed input.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedInstance {
    pub instance: LabeledInstance,
    pub teacher_logits: Vec<f64>,
}

/// Pairs the i-th high-band instance with the i-th low-band one:
/// `x = lambda x_high + (1 - lambda) x_low`, likewise for one-hot labels.
pub fn mixup_pairs(
    high: &[&LabeledInstance],
    low: &[&LabeledInstance],
    lambda: f64,
    teacher: &Mlp,
) -> Result<Vec<MixedInstance>> {
    check_len("mixup bands", high.len(), low.len())?;
    if !(lambda > 0.5 && lambda <= 1.0) {
        return Err(Error::domain(format!(
            "mixing weight {lambda} outside (0.5, 1]"
        )));
    }
    let k = teacher.output_dim();
    high.iter()
        .zip(low)
        .map(|(h, l)| {
            check_len("mixup features", h.features.len(), l.features.len())?;
            let features: Vec<f64> = h
                .features
                .iter()
                .zip(&l.features)
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect();
            let soft = ProbVector::mix(
                &ProbVector::one_hot(k, h.label)?,
                &ProbVector::one_hot(k, l.label)?,
                lambda,
            )?;
            let teacher_logits = teacher.predict(&features)?;
            Ok(MixedInstance {
                instance: LabeledInstance {
                    features,
                    label: h.label,
                    soft_label: Some(soft),
                },
                teacher_logits,
            })
        })
        .collect()
}

/// Ranks, selects bands and mixes them into the exploration set.
pub fn build_exploration_set(
    data: &[LabeledInstance],
    student: &Mlp,
    teacher: &Mlp,
    config: &ExplorationConfig,
    epoch: usize,
) -> Result<(EntropyRanking, Vec<MixedInstance>)> {
    let ranking = rank_by_entropy(data, student, epoch)?;
    let bands = select_bands(&ranking, config)?;
    let high: Vec<&LabeledInstance> = bands.high.iter().map(|i| &data[*i]).collect();
    let low: Vec<&LabeledInstance> = bands.low.iter().map(|i| &data[*i]).collect();
    let mixed = mixup_pairs(&high, &low, config.lambda_mix, teacher)?;
    Ok((ranking, mixed))
}

/// Borrowed state an exploration step needs from the training loop.
pub struct ExplorationContext<'a> {
    pub epoch: usize,
    pub phase_epochs: usize,
    pub extra_steps: usize,
    pub batch_size: usize,
    pub kd: &'a KdConfig,
    pub probe: &'a [LabeledInstance],
}

#[derive(Debug, Clone, Default)]
pub struct ExplorationDiagnostics {
    pub extra_steps: usize,
    pub cycles: Vec<CycleReport>,
    pub warning: Option<String>,
}

/// Extra agent-learning cycles on mini-batches of the mixed set. Student
/// updates happen on a throwaway copy of the student and its optimizer.
pub fn exploration_step<R: Rng + ?Sized>(
    mixed: &[MixedInstance],
    controller: &mut RlkdController,
    student: &Mlp,
    student_optimizer: &Optimizer,
    ctx: &ExplorationContext<'_>,
    rng: &mut R,
) -> Result<ExplorationDiagnostics> {
    let mut diag = ExplorationDiagnostics::default();
    if ctx.epoch >= ctx.phase_epochs || ctx.extra_steps == 0 {
        return Ok(diag);
    }
    if mixed.is_empty() {
        diag.warning = Some("exploration set is empty; skipping".into());
        return Ok(diag);
    }
    for _ in 0..ctx.extra_steps {
        let take = ctx.batch_size.min(mixed.len());
        let picked = sample(rng, mixed.len(), take).into_vec();
        let batch: Vec<LabeledInstance> =
            picked.iter().map(|i| mixed[*i].instance.clone()).collect();
        let teacher_logits: Vec<&[f64]> = picked
            .iter()
            .map(|i| mixed[*i].teacher_logits.as_slice())
            .collect();

        let mut shadow = student.clone();
        let mut shadow_opt = student_optimizer.clone();
        let temperatures = controller.observe_and_act(&batch, &teacher_logits, &shadow)?;
        let before = shadow.clone();
        student_update_step(
            &mut shadow,
            &mut shadow_opt,
            &batch,
            &teacher_logits,
            &temperatures,
            ctx.kd,
        )?;
        let raw = measure_batch_reward(&before, &shadow, ctx.probe)?;
        diag.cycles.push(controller.learn(raw, ctx.epoch)?);
        diag.extra_steps += 1;
    }
    Ok(diag)
}
