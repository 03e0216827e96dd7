use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean KD loss of the batch updates, taken before each step.
    pub train_kd_loss: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub temp_mean: f64,
    pub temp_min: f64,
    pub temp_max: f64,
    // Agent columns stay empty for the fixed controller.
    pub raw_reward_mean: Option<f64>,
    pub shaped_reward_mean: Option<f64>,
    pub corrector_loss: Option<f64>,
    pub updater_loss: Option<f64>,
    pub clip_fraction: Option<f64>,
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub exploration_steps: usize,
    pub skipped_steps: usize,
    /// Kept out of metrics.csv so that file is reproducible byte for byte.
    #[serde(skip)]
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: [&str; 18] = [
    "epoch",
    "train_kd_loss",
    "train_loss",
    "train_acc",
    "val_loss",
    "val_acc",
    "temp_mean",
    "temp_min",
    "temp_max",
    "raw_reward_mean",
    "shaped_reward_mean",
    "corrector_loss",
    "updater_loss",
    "clip_fraction",
    "actor_loss",
    "critic_loss",
    "exploration_steps",
    "skipped_steps",
];

/// `%g` with six significant digits.
pub fn format_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}").to_lowercase();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

impl EpochMetrics {
    pub fn row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(format_g6).unwrap_or_default();
        vec![
            self.epoch.to_string(),
            format_g6(self.train_kd_loss),
            format_g6(self.train_loss),
            format_g6(self.train_acc),
            format_g6(self.val_loss),
            format_g6(self.val_acc),
            format_g6(self.temp_mean),
            format_g6(self.temp_min),
            format_g6(self.temp_max),
            opt(self.raw_reward_mean),
            opt(self.shaped_reward_mean),
            opt(self.corrector_loss),
            opt(self.updater_loss),
            opt(self.clip_fraction),
            opt(self.actor_loss),
            opt(self.critic_loss),
            self.exploration_steps.to_string(),
            self.skipped_steps.to_string(),
        ]
    }

    /// Every value finite and the temperature summary inside (0, 10).
    pub fn check(&self) -> Result<()> {
        let values = [
            self.train_kd_loss,
            self.train_loss,
            self.train_acc,
            self.val_loss,
            self.val_acc,
            self.temp_mean,
            self.temp_min,
            self.temp_max,
        ]
        .into_iter()
        .chain(
            [
                self.raw_reward_mean,
                self.shaped_reward_mean,
                self.corrector_loss,
                self.updater_loss,
                self.clip_fraction,
                self.actor_loss,
                self.critic_loss,
            ]
            .into_iter()
            .flatten(),
        );
        for v in values {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("epoch {} metrics", self.epoch)));
            }
        }
        if !(self.temp_min > 0.0 && self.temp_max < 10.0) {
            return Err(Error::domain(format!(
                "epoch {} temperatures [{}, {}] leave (0, 10)",
                self.epoch, self.temp_min, self.temp_max
            )));
        }
        Ok(())
    }
}

/// Appends one flushed row per epoch to metrics.csv and timing.csv.
pub struct MetricsWriter {
    metrics: csv::Writer<File>,
    timing: csv::Writer<File>,
    dir: PathBuf,
}

impl MetricsWriter {
    /// Creates the directory and both files with their headers, so an
    /// unwritable location fails before any training.
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str| {
            let path = dir.join(name);
            File::create(&path)
                .map(csv::Writer::from_writer)
                .map_err(|e| Error::io(path, e))
        };
        let mut w = MetricsWriter {
            metrics: open("metrics.csv")?,
            timing: open("timing.csv")?,
            dir: dir.to_path_buf(),
        };
        w.write(|w| w.metrics.write_record(METRICS_HEADER))?;
        w.write(|w| w.timing.write_record(["epoch", "wall_seconds"]))?;
        w.flush()?;
        Ok(w)
    }

    fn write(&mut self, f: impl FnOnce(&mut Self) -> csv::Result<()>) -> Result<()> {
        f(self).map_err(|e| {
            let dir = self.dir.clone();
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(dir, io),
                other => Error::domain(format!("metrics writer: {other:?}")),
            }
        })
    }

    fn flush(&mut self) -> Result<()> {
        self.metrics
            .flush()
            .map_err(|e| Error::io(self.dir.join("metrics.csv"), e))?;
        self.timing
            .flush()
            .map_err(|e| Error::io(self.dir.join("timing.csv"), e))
    }

    pub fn append(&mut self, m: &EpochMetrics) -> Result<()> {
        let row = m.row();
        self.write(|w| w.metrics.write_record(&row))?;
        let timing = [m.epoch.to_string(), format_g6(m.wall_seconds)];
        self.write(|w| w.timing.write_record(&timing))?;
        self.flush()
    }
}
