use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rlkd::distill::evaluate;
use rlkd::harness::{
    ablate, compare, obtain_teacher, prepare_data, run_experiment, ControllerKind, ExperimentConfig,
};
use rlkd::{Error, Result};

#[derive(Parser)]
#[command(
    name = "rlkd",
    version,
    about = "Knowledge distillation with a learned per-instance temperature"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the teacher and save it as teacher.json.
    TrainTeacher(Common),
    /// Run one distillation experiment.
    Distill(Common),
    /// Fixed temperature against the learned controller on several seeds.
    Compare(Multi),
    /// The learned controller with each component switched off in turn.
    Ablate(Multi),
}

#[derive(Args)]
struct Common {
    /// JSON configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for metrics and snapshots.
    #[arg(long)]
    out: Option<PathBuf>,
    /// fixed or rlkd
    #[arg(long)]
    controller: Option<ControllerKind>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args)]
struct Multi {
    #[command(flatten)]
    common: Common,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
        if let Some(c) = self.controller {
            cfg.controller = c;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn dump(cfg: &ExperimentConfig) -> Result<()> {
    println!("{}", cfg.to_json()?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainTeacher(c) => {
            let cfg = c.resolve()?;
            if c.dump_config {
                return dump(&cfg);
            }
            let data = prepare_data(&cfg)?;
            let teacher = obtain_teacher(&cfg, &data)?;
            let (loss, acc) = evaluate(&teacher, &data.val)?;
            println!("teacher val_loss {loss:.4} val_acc {acc:.4}");
            if let Some(dir) = &cfg.output_dir {
                std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
                let path = dir.join("teacher.json");
                std::fs::write(&path, serde_json::to_string(&teacher)?)
                    .map_err(|e| io_error(&path, e))?;
                println!("wrote {}", path.display());
            }
        }
        Command::Distill(c) => {
            let cfg = c.resolve()?;
            if c.dump_config {
                return dump(&cfg);
            }
            let out = run_experiment(&cfg)?;
            for m in &out.history {
                println!(
                    "epoch {:>3}  train_loss {:.4}  val_loss {:.4}  val_acc {:.4}  T mean {:.3} [{:.3}, {:.3}]",
                    m.epoch, m.train_loss, m.val_loss, m.val_acc, m.temp_mean, m.temp_min, m.temp_max
                );
            }
        }
        Command::Compare(m) => {
            let cfg = m.common.resolve()?;
            if m.common.dump_config {
                return dump(&cfg);
            }
            print!("{}", compare(&cfg, &m.seeds)?.table());
        }
        Command::Ablate(m) => {
            let cfg = m.common.resolve()?;
            if m.common.dump_config {
                return dump(&cfg);
            }
            print!("{}", ablate(&cfg, &m.seeds)?.table());
        }
    }
    Ok(())
}

fn io_error(path: &std::path::Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({"error": e.kind(), "message": e.to_string()});
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
