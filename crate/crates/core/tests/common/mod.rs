#![allow(dead_code)]

use rand::seq::index::sample;
use rand::Rng;

/// Worst relative error between analytic and central-difference gradients
/// over `coords` coordinates whose analytic magnitude exceeds `min_grad`.
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
}

pub fn check_gradient<R: Rng>(
    params: &[f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
    coords: usize,
    step: f64,
    rng: &mut R,
) -> GradCheck {
    assert_eq!(params.len(), analytic.len());
    let candidates: Vec<usize> = (0..params.len())
        .filter(|&i| analytic[i].abs() > 1e-6)
        .collect();
    let take = coords.min(candidates.len());
    let picked = sample(rng, candidates.len(), take).into_vec();
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for k in picked {
        let i = candidates[k];
        let orig = p[i];
        p[i] = orig + step;
        let up = loss(&p);
        p[i] = orig - step;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let rel = (numeric - analytic[i]).abs() / analytic[i].abs().max(numeric.abs());
        worst = worst.max(rel);
    }
    GradCheck {
        checked: take,
        max_rel_error: worst,
    }
}

/// Ranks starting at 1, ties share their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Small blobs config for quick end-to-end runs.
pub fn quick_config(epochs: usize) -> rlkd::harness::ExperimentConfig {
    use rlkd::harness::{BlobSpec, DatasetSpec, ExperimentConfig};
    ExperimentConfig {
        dataset: DatasetSpec::Blobs(BlobSpec {
            classes: 3,
            dim: 2,
            n: 600,
            ..BlobSpec::default()
        }),
        teacher_hidden: vec![16],
        teacher_epochs: 5,
        epochs,
        reward: rlkd::reward::RewardConfig {
            probe_size: 64,
            ..Default::default()
        },
        ..ExperimentConfig::default()
    }
}
