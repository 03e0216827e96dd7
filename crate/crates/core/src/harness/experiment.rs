use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::config::{ControllerKind, ExperimentConfig};
use super::data::{load_dataset, Dataset};
use super::metrics::{EpochMetrics, MetricsWriter};
use crate::controller::{CycleReport, RlkdController};
use crate::distill::{evaluate, init_network, student_update_step, train_teacher, LabeledInstance};
use crate::error::{Error, Result};
use crate::exploration::{
    build_exploration_set, exploration_step, EntropyRanking, ExplorationContext, MixedInstance,
};
use crate::numkernel::Mlp;
use crate::reward::{measure_batch_reward, warmup_factor};
use crate::rng::SeedTree;

/// Names of the random streams split off the run seed.
pub mod streams {
    pub const DATA: &str = "data";
    pub const TEACHER_INIT: &str = "teacher_init";
    pub const TEACHER_SHUFFLE: &str = "teacher_shuffle";
    pub const STUDENT_INIT: &str = "student_init";
    pub const BATCHES: &str = "batches";
    /// Subtree for the agent, corrector and state updater.
    pub const AGENT: &str = "agent";
    pub const EXPLORATION: &str = "exploration";
}

/// Steps of one batch in the order they happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchEvent {
    Act,
    StudentUpdate,
    RewardMeasured,
    Calibrated,
    PpoUpdate,
    Exploration,
}

const REQUIRED_ORDER: [BatchEvent; 4] = [
    BatchEvent::StudentUpdate,
    BatchEvent::RewardMeasured,
    BatchEvent::Calibrated,
    BatchEvent::PpoUpdate,
];

/// Counters filled while the run checks its own invariants. Any violation
/// aborts the run, so a finished run has every `*_checked` count satisfied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunAudit {
    pub batches: usize,
    pub temperatures_checked: usize,
    pub states_checked: usize,
    pub telescoping_checked: usize,
    pub ordering_checked: usize,
    pub buffer_clears: usize,
    pub ppo_updates: usize,
    /// Warm-up factor at the start of each epoch.
    pub warmup_factors: Vec<f64>,
    pub student_steps_skipped: usize,
}

impl RunAudit {
    fn check_cycle(&mut self, report: &CycleReport, epoch: usize, batch: usize) -> Result<()> {
        for t in &report.temperatures {
            if !(*t > 0.0 && *t < 10.0) {
                return Err(violation(
                    epoch,
                    batch,
                    format!("temperature {t} outside (0, 10)"),
                ));
            }
            self.temperatures_checked += 1;
        }
        for s in report.observed_states.iter().chain(&report.final_states) {
            if !s.is_valid() {
                return Err(violation(
                    epoch,
                    batch,
                    format!("state {s:?} outside [0, 1]"),
                ));
            }
            self.states_checked += 1;
        }
        if let Some(cal) = &report.calibration {
            let sum: f64 = cal.per_instance_rewards.iter().sum();
            let last = cal.cumulative_predictions.last().copied().unwrap_or(0.0);
            if sum != last || !cal.telescopes() {
                return Err(violation(
                    epoch,
                    batch,
                    format!("calibrated rewards sum to {sum}, prediction is {last}"),
                ));
            }
            self.telescoping_checked += 1;
        }
        if report.buffer_len > 0 {
            if report.buffer_clears != 1 {
                return Err(violation(
                    epoch,
                    batch,
                    format!(
                        "replay buffer emptied {} times in one cycle",
                        report.buffer_clears
                    ),
                ));
            }
            self.ppo_updates += 1;
        }
        self.buffer_clears += report.buffer_clears as usize;
        Ok(())
    }

    fn check_order(&mut self, events: &[BatchEvent], epoch: usize, batch: usize) -> Result<()> {
        let positions: Vec<usize> = REQUIRED_ORDER
            .iter()
            .filter_map(|e| events.iter().position(|x| x == e))
            .collect();
        if positions.len() == REQUIRED_ORDER.len() && !positions.windows(2).all(|w| w[0] < w[1]) {
            return Err(violation(
                epoch,
                batch,
                format!("batch steps ran as {events:?}"),
            ));
        }
        self.ordering_checked += 1;
        Ok(())
    }
}

fn violation(epoch: usize, batch: usize, msg: String) -> Error {
    Error::Aborted {
        epoch,
        batch,
        source: Box::new(Error::domain(msg)),
    }
}

fn abort(epoch: usize, batch: usize) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        e @ Error::Aborted { .. } => e,
        e => Error::Aborted {
            epoch,
            batch,
            source: Box::new(e),
        },
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub history: Vec<EpochMetrics>,
    pub audit: RunAudit,
    pub student: Mlp,
    pub teacher: Mlp,
    pub controller: Option<RlkdController>,
    pub ranking: Option<EntropyRanking>,
}

impl RunOutcome {
    pub fn final_metrics(&self) -> &EpochMetrics {
        self.history.last().expect("at least one epoch")
    }
}

/// Trains the teacher from the config's seed, or loads it from
/// `teacher_path`.
pub fn obtain_teacher(cfg: &ExperimentConfig, data: &Dataset) -> Result<Mlp> {
    if let Some(path) = &cfg.teacher_path {
        return load_model(path);
    }
    let seeds = SeedTree::new(cfg.seed);
    train_teacher(
        &data.train,
        &cfg.teacher_hidden,
        data.classes,
        cfg.teacher_epochs,
        &cfg.kd,
        &mut seeds.rng(streams::TEACHER_INIT),
        &mut seeds.rng(streams::TEACHER_SHUFFLE),
    )
}

pub fn load_model(path: &Path) -> Result<Mlp> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn save_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let path = dir.join(name);
    let text = serde_json::to_string(value)?;
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    let seeds = SeedTree::new(cfg.seed);
    load_dataset(
        &cfg.dataset,
        cfg.reward.probe_size,
        cfg.val_fraction,
        &mut seeds.rng(streams::DATA),
    )
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let teacher = obtain_teacher(cfg, &data)?;
    run_with_teacher(cfg, &data, teacher)
}

#[derive(Serialize)]
struct AgentSnapshot<'a> {
    actor: &'a Mlp,
    critic: &'a Mlp,
}

/// Distillation loop for an already available teacher.
pub fn run_with_teacher(
    cfg: &ExperimentConfig,
    data: &Dataset,
    teacher: Mlp,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut writer = match &cfg.output_dir {
        Some(dir) => {
            let w = MetricsWriter::create(dir)?;
            let config_path = dir.join("config.json");
            fs::write(&config_path, cfg.to_json()?).map_err(|e| Error::io(config_path, e))?;
            Some(w)
        }
        None => None,
    };

    let seeds = SeedTree::new(cfg.seed);
    let teacher_logits: Vec<Vec<f64>> = data
        .train
        .iter()
        .map(|d| teacher.predict(&d.features))
        .collect::<Result<_>>()?;
    let mut student = init_network(
        data.input_dim,
        &cfg.student_hidden,
        data.classes,
        &mut seeds.rng(streams::STUDENT_INIT),
    )?;
    let mut optimizer = cfg.kd.optimizer(cfg.kd.student_lr)?;
    let mut batch_rng = seeds.rng(streams::BATCHES);
    let mut explore_rng = seeds.rng(streams::EXPLORATION);
    let mut controller = match cfg.controller {
        ControllerKind::Fixed => None,
        ControllerKind::Rlkd => Some(RlkdController::new(
            cfg.ppo.clone(),
            cfg.reward.clone(),
            cfg.ablations,
            &seeds.child(streams::AGENT),
        )?),
    };
    let phase_epochs = if cfg.ablations.exploration_off {
        0
    } else {
        cfg.exploration.resolved_phase_epochs(cfg.reward.warmup_n)
    };

    let mut audit = RunAudit::default();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut ranking = None;
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        audit
            .warmup_factors
            .push(warmup_factor(epoch, cfg.reward.warmup_n));
        let explore = controller.is_some() && epoch < phase_epochs;
        let mixed: Vec<MixedInstance> = if explore {
            let (r, m) =
                build_exploration_set(&data.train, &student, &teacher, &cfg.exploration, epoch)
                    .map_err(abort(epoch, 0))?;
            ranking = Some(r);
            m
        } else {
            Vec::new()
        };

        order.shuffle(&mut batch_rng);
        let mut acc = EpochAccumulator::default();
        for (b, chunk) in order.chunks(cfg.kd.batch_size).enumerate() {
            let wrap = abort(epoch, b);
            let mut events = Vec::with_capacity(6);
            let batch: Vec<LabeledInstance> =
                chunk.iter().map(|&i| data.train[i].clone()).collect();
            let logits: Vec<&[f64]> = chunk
                .iter()
                .map(|&i| teacher_logits[i].as_slice())
                .collect();

            let mut temps = match controller.as_mut() {
                Some(c) => c.observe_and_act(&batch, &logits, &student).map_err(wrap)?,
                None => vec![cfg.kd.default_temperature; batch.len()],
            };
            events.push(BatchEvent::Act);
            if let Some(t) = cfg.force_temperature {
                temps.fill(t);
            }
            let before = controller.as_ref().map(|_| student.clone());
            let step = student_update_step(
                &mut student,
                &mut optimizer,
                &batch,
                &logits,
                &temps,
                &cfg.kd,
            )
            .map_err(abort(epoch, b))?;
            events.push(BatchEvent::StudentUpdate);
            if !step.applied {
                audit.student_steps_skipped += 1;
            }
            acc.kd_loss += step.mean_loss * batch.len() as f64;
            acc.count += batch.len();
            acc.temps.extend_from_slice(&temps);

            if let (Some(c), Some(before)) = (controller.as_mut(), before) {
                let raw = measure_batch_reward(&before, &student, &data.probe)
                    .map_err(abort(epoch, b))?;
                events.push(BatchEvent::RewardMeasured);
                let report = c.learn(raw, epoch).map_err(abort(epoch, b))?;
                if report.calibration.is_some() {
                    events.push(BatchEvent::Calibrated);
                }
                events.push(BatchEvent::PpoUpdate);
                audit.check_cycle(&report, epoch, b)?;
                acc.add_cycle(&report);

                if explore {
                    let ctx = ExplorationContext {
                        epoch,
                        phase_epochs,
                        extra_steps: cfg.exploration.extra_steps_per_batch,
                        batch_size: cfg.kd.batch_size,
                        kd: &cfg.kd,
                        probe: &data.probe,
                    };
                    let diag =
                        exploration_step(&mixed, c, &student, &optimizer, &ctx, &mut explore_rng)
                            .map_err(abort(epoch, b))?;
                    for cycle in &diag.cycles {
                        audit.check_cycle(cycle, epoch, b)?;
                    }
                    acc.exploration_steps += diag.extra_steps;
                    events.push(BatchEvent::Exploration);
                }
            }
            audit.check_order(&events, epoch, b)?;
            audit.batches += 1;
        }

        let (train_loss, train_acc) = evaluate(&student, &data.train).map_err(abort(epoch, 0))?;
        let (val_loss, val_acc) = evaluate(&student, &data.val).map_err(abort(epoch, 0))?;
        let mut m = acc.finish(epoch);
        m.train_loss = train_loss;
        m.train_acc = train_acc;
        m.val_loss = val_loss;
        m.val_acc = val_acc;
        m.skipped_steps = optimizer.skipped() as usize;
        m.wall_seconds = started.elapsed().as_secs_f64();
        if let Some(w) = writer.as_mut() {
            w.append(&m)?;
        }
        m.check().map_err(abort(epoch, 0))?;
        history.push(m);
    }

    if let Some(dir) = &cfg.output_dir {
        save_json(dir, "student.json", &student)?;
        save_json(dir, "teacher.json", &teacher)?;
        if let Some(c) = &controller {
            let agent = c.agent();
            save_json(
                dir,
                "agent.json",
                &AgentSnapshot {
                    actor: agent.actor(),
                    critic: agent.critic(),
                },
            )?;
        }
        save_json(dir, "ranking.json", &ranking)?;
    }

    Ok(RunOutcome {
        history,
        audit,
        student,
        teacher,
        controller,
        ranking,
    })
}

#[derive(Default)]
struct EpochAccumulator {
    kd_loss: f64,
    count: usize,
    temps: Vec<f64>,
    raw: Vec<f64>,
    shaped: Vec<f64>,
    corrector: Vec<f64>,
    updater: Vec<f64>,
    clip: Vec<f64>,
    actor: Vec<f64>,
    critic: Vec<f64>,
    exploration_steps: usize,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl EpochAccumulator {
    fn add_cycle(&mut self, r: &CycleReport) {
        self.raw.push(r.raw_reward);
        self.shaped.push(r.shaped_reward);
        self.corrector.extend(r.corrector_loss);
        self.updater.extend(r.updater_loss);
        if !r.ppo.passes.is_empty() {
            self.clip.push(r.ppo.clip_fraction());
            self.actor.push(r.ppo.actor_loss());
            self.critic.push(r.ppo.critic_loss());
        }
    }

    fn finish(self, epoch: usize) -> EpochMetrics {
        let (lo, hi) = self
            .temps
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
                (lo.min(*t), hi.max(*t))
            });
        EpochMetrics {
            epoch,
            train_kd_loss: self.kd_loss / self.count.max(1) as f64,
            temp_mean: mean(&self.temps).unwrap_or(f64::NAN),
            temp_min: lo,
            temp_max: hi,
            raw_reward_mean: mean(&self.raw),
            shaped_reward_mean: mean(&self.shaped),
            corrector_loss: mean(&self.corrector),
            updater_loss: mean(&self.updater),
            clip_fraction: mean(&self.clip),
            actor_loss: mean(&self.actor),
            critic_loss: mean(&self.critic),
            exploration_steps: self.exploration_steps,
            ..EpochMetrics::default()
        }
    }
}
