use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::PpoConfig;
use crate::controller::Ablations;
use crate::distill::{KdConfig, MAX_TEMPERATURE};
use crate::error::{Error, Result};
use crate::exploration::ExplorationConfig;
use crate::reward::RewardConfig;

/// Isotropic Gaussian clusters, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    pub n: usize,
    /// Standard deviation of the cluster centres.
    pub center_spread: f64,
    /// Standard deviation of points around their centre.
    pub noise: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            classes: 5,
            dim: 4,
            n: 3000,
            center_spread: 2.0,
            noise: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Blobs(BlobSpec),
    /// Header `f0,...,fm,label`, numeric features and an integer label.
    Csv {
        path: PathBuf,
    },
    /// Big-endian IDX image and label files; `subsample` instances are kept.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "default_subsample")]
        subsample: usize,
    },
}

fn default_subsample() -> usize {
    2000
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Blobs(BlobSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    /// Every instance uses `kd.default_temperature`.
    Fixed,
    #[default]
    Rlkd,
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(ControllerKind::Fixed),
            "rlkd" => Ok(ControllerKind::Rlkd),
            other => Err(Error::Config(format!(
                "unknown controller {other:?}; expected fixed or rlkd"
            ))),
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ControllerKind::Fixed => "fixed",
            ControllerKind::Rlkd => "rlkd",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub teacher_hidden: Vec<usize>,
    pub student_hidden: Vec<usize>,
    pub teacher_epochs: usize,
    /// Load a previously trained teacher instead of training one.
    pub teacher_path: Option<PathBuf>,
    pub kd: KdConfig,
    pub ppo: PpoConfig,
    pub reward: RewardConfig,
    pub exploration: ExplorationConfig,
    pub controller: ControllerKind,
    pub ablations: Ablations,
    /// Overrides every emitted temperature after the agent has acted. The
    /// agent still observes, acts and learns.
    pub force_temperature: Option<f64>,
    pub epochs: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            teacher_hidden: vec![64, 64],
            student_hidden: vec![8],
            teacher_epochs: 30,
            teacher_path: None,
            kd: KdConfig::default(),
            ppo: PpoConfig::default(),
            reward: RewardConfig::default(),
            exploration: ExplorationConfig::default(),
            controller: ControllerKind::default(),
            ablations: Ablations::default(),
            force_temperature: None,
            epochs: 30,
            seed: 0,
            val_fraction: 0.2,
            output_dir: None,
        }
    }
}

fn check_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} does not exist", path.display())))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction {} outside (0, 1)",
                self.val_fraction
            )));
        }
        if self.teacher_hidden.contains(&0) || self.student_hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if let Some(t) = self.force_temperature {
            if !(t > 0.0 && t <= MAX_TEMPERATURE) {
                return Err(Error::Config(format!(
                    "force_temperature {t} outside (0, {MAX_TEMPERATURE}]"
                )));
            }
        }
        match &self.dataset {
            DatasetSpec::Blobs(b) => {
                if b.classes < 2 || b.dim == 0 || b.n == 0 {
                    return Err(Error::Config(
                        "blobs need at least 2 classes, 1 dimension and 1 instance".into(),
                    ));
                }
                if !(b.noise >= 0.0 && b.center_spread >= 0.0) {
                    return Err(Error::Config("blob spreads must be non-negative".into()));
                }
            }
            DatasetSpec::Csv { path } => check_exists(path)?,
            DatasetSpec::Idx {
                images,
                labels,
                subsample,
            } => {
                check_exists(images)?;
                check_exists(labels)?;
                if *subsample == 0 {
                    return Err(Error::Config("idx subsample must be positive".into()));
                }
            }
        }
        if let Some(p) = &self.teacher_path {
            check_exists(p)?;
        }
        self.kd.validate()?;
        self.ppo.validate()?;
        self.reward.validate()?;
        self.exploration.validate()?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Pretty JSON of the fully resolved configuration.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(
            ExperimentConfig::from_json("{}").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig {
            seed: u64::MAX,
            controller: ControllerKind::Fixed,
            ..Default::default()
        };
        cfg.ablations.calibration_off = true;
        cfg.force_temperature = Some(2.5);
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_dataset_fills_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"dataset": {"kind": "blobs", "classes": 3}, "epochs": 2}"#,
        )
        .unwrap();
        let DatasetSpec::Blobs(b) = cfg.dataset else {
            panic!()
        };
        assert_eq!(b.classes, 3);
        assert_eq!(b.n, 3000);
        assert_eq!(cfg.epochs, 2);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_json(r#"{"epochs": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"epoch": 3}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"seed": -1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"force_temperature": 11.0}"#).is_err());
        let missing = r#"{"dataset": {"kind": "csv", "path": "/nonexistent/x.csv"}}"#;
        assert_eq!(
            ExperimentConfig::from_json(missing).unwrap_err().kind(),
            "config"
        );
    }

    #[test]
    fn key_order_is_stable() {
        let a = ExperimentConfig::default().to_json().unwrap();
        let b = ExperimentConfig::from_json(&a).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        assert!(a.find("\"dataset\"").unwrap() < a.find("\"seed\"").unwrap());
    }
}
