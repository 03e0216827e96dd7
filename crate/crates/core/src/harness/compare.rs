use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ControllerKind, ExperimentConfig};
use super::experiment::run_experiment;
use crate::controller::Ablations;
use crate::error::{Error, Result};

/// Final validation accuracy of one variant across seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantResult {
    pub name: String,
    pub seeds: Vec<u64>,
    pub val_acc: Vec<f64>,
    pub val_loss: Vec<f64>,
}

impl VariantResult {
    pub fn mean_acc(&self) -> f64 {
        mean_std(&self.val_acc).0
    }

    pub fn std_acc(&self) -> f64 {
        mean_std(&self.val_acc).1
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    /// The first variant is the reference for the delta column.
    pub variants: Vec<VariantResult>,
}

pub const REPORT_COLUMNS: [&str; 6] = [
    "variant",
    "seeds",
    "mean_val_acc",
    "std_val_acc",
    "delta_pp",
    "mean_val_loss",
];

impl ComparisonReport {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.name == name)
    }

    fn rows(&self) -> Vec<[String; 6]> {
        let base = self.variants.first().map_or(0.0, VariantResult::mean_acc);
        self.variants
            .iter()
            .map(|v| {
                [
                    v.name.clone(),
                    v.seeds.len().to_string(),
                    format!("{:.4}", v.mean_acc()),
                    format!("{:.4}", v.std_acc()),
                    format!("{:+.2}", 100.0 * (v.mean_acc() - base)),
                    format!("{:.4}", mean_std(&v.val_loss).0),
                ]
            })
            .collect()
    }

    /// Fixed-width text table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>5} {:>12} {:>11} {:>8} {:>13}",
            REPORT_COLUMNS[0],
            REPORT_COLUMNS[1],
            REPORT_COLUMNS[2],
            REPORT_COLUMNS[3],
            REPORT_COLUMNS[4],
            REPORT_COLUMNS[5]
        );
        for r in self.rows() {
            let _ = writeln!(
                out,
                "{:<16} {:>5} {:>12} {:>11} {:>8} {:>13}",
                r[0], r[1], r[2], r[3], r[4], r[5]
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = REPORT_COLUMNS.join(",");
        text.push('\n');
        for r in self.rows() {
            text.push_str(&r.join(","));
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn run_variants(
    base: &ExperimentConfig,
    variants: &[(String, ExperimentConfig)],
    seeds: &[u64],
) -> Result<ComparisonReport> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    base.validate()?;
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| seeds.iter().map(move |s| (v, *s)))
        .collect();
    let results: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let (name, cfg) = &variants[v];
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            cfg.output_dir = base
                .output_dir
                .as_ref()
                .map(|d| d.join(format!("{name}_seed{seed}")));
            let out = run_experiment(&cfg)?;
            let m = out.final_metrics();
            Ok((m.val_acc, m.val_loss))
        })
        .collect::<Result<_>>()?;
    let mut report = ComparisonReport {
        variants: Vec::new(),
    };
    for (v, (name, _)) in variants.iter().enumerate() {
        let mine = &results[v * seeds.len()..(v + 1) * seeds.len()];
        report.variants.push(VariantResult {
            name: name.clone(),
            seeds: seeds.to_vec(),
            val_acc: mine.iter().map(|r| r.0).collect(),
            val_loss: mine.iter().map(|r| r.1).collect(),
        });
    }
    if let Some(dir) = &base.output_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(report)
}

/// Fixed-temperature baseline against the learned controller on the same
/// seeds.
pub fn compare(base: &ExperimentConfig, seeds: &[u64]) -> Result<ComparisonReport> {
    let variants = [ControllerKind::Fixed, ControllerKind::Rlkd]
        .map(|kind| {
            let mut cfg = base.clone();
            cfg.controller = kind;
            (kind.to_string(), cfg)
        })
        .to_vec();
    let report = run_variants(base, &variants, seeds)?;
    if let Some(dir) = &base.output_dir {
        report.write_csv(&dir.join("compare.csv"))?;
    }
    Ok(report)
}

pub fn ablation_variants() -> Vec<(&'static str, Ablations)> {
    let off = Ablations::default();
    vec![
        ("full", off),
        (
            "no_uncertainty",
            Ablations {
                uncertainty_off: true,
                ..off
            },
        ),
        (
            "no_calibration",
            Ablations {
                calibration_off: true,
                ..off
            },
        ),
        (
            "no_exploration",
            Ablations {
                exploration_off: true,
                ..off
            },
        ),
    ]
}

/// The learned controller with each component switched off in turn.
pub fn ablate(base: &ExperimentConfig, seeds: &[u64]) -> Result<ComparisonReport> {
    let variants: Vec<(String, ExperimentConfig)> = ablation_variants()
        .into_iter()
        .map(|(name, ablations)| {
            let mut cfg = base.clone();
            cfg.controller = ControllerKind::Rlkd;
            cfg.ablations = ablations;
            (name.to_string(), cfg)
        })
        .collect();
    let report = run_variants(base, &variants, seeds)?;
    if let Some(dir) = &base.output_dir {
        report.write_csv(&dir.join("ablation.csv"))?;
    }
    Ok(report)
}
