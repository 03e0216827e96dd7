//! The temperature controller: builds states, samples temperatures, and
//! after the student update turns the batch reward into a PPO update.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{
    compute_advantages, Agent, PpoConfig, PpoDiagnostics, ReplayBuffer, TransitionRecord,
};
use crate::distill::LabeledInstance;
use crate::error::{check_len, Error, Result};
use crate::numkernel::{softmax_with_temperature, Mlp, Optimizer, OptimizerKind};
use crate::reward::{
    calibrate_rewards, corrector_train_step, warmup_factor, Corrector, Episode, RewardBatch,
    RewardConfig, StateAdjuster,
};
use crate::rng::SeedTree;
use crate::state::{build_state, StateObservation};

/// Switches that remove one component of the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Replace the uncertainty component of the state with a constant.
    pub uncertainty_off: bool,
    /// Skip reward redistribution and state updating; the whole batch reward
    /// lands on the last transition.
    pub calibration_off: bool,
    /// Skip the entropy-ranked exploration phase.
    pub exploration_off: bool,
}

/// What happened in one agent-learning cycle.
#[derive(Debug, Clone, Default)]
pub struct CycleReport {
    pub raw_reward: f64,
    pub shaped_reward: f64,
    pub warmup_factor: f64,
    pub temperatures: Vec<f64>,
    /// States as observed when acting.
    pub observed_states: Vec<StateObservation>,
    /// States handed to the PPO update.
    pub final_states: Vec<StateObservation>,
    pub calibration: Option<RewardBatch>,
    pub corrector_loss: Option<f64>,
    pub updater_loss: Option<f64>,
    pub ppo: PpoDiagnostics,
    pub buffer_len: usize,
    /// Times the replay buffer was emptied during this cycle.
    pub buffer_clears: u64,
}

#[derive(Debug, Clone)]
pub struct RlkdController {
    agent: Agent,
    corrector: Corrector,
    corrector_opt: Optimizer,
    adjuster: StateAdjuster,
    history: VecDeque<Episode>,
    buffer: ReplayBuffer,
    reward_config: RewardConfig,
    ablations: Ablations,
    action_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    pending_temperatures: Vec<f64>,
    pending_states: Vec<StateObservation>,
}

impl RlkdController {
    pub fn new(
        ppo: PpoConfig,
        reward: RewardConfig,
        ablations: Ablations,
        seeds: &SeedTree,
    ) -> Result<Self> {
        reward.validate()?;
        let agent = Agent::new(ppo, &mut seeds.rng("agent_init"))?;
        let corrector = Corrector::new(reward.corrector_hidden, &mut seeds.rng("corrector_init"))?;
        let adjuster = StateAdjuster::new(
            reward.updater_hidden,
            reward.updater_lr,
            &mut seeds.rng("updater_init"),
        )?;
        Ok(RlkdController {
            agent,
            corrector,
            corrector_opt: Optimizer::new(OptimizerKind::adam(), reward.corrector_lr)?,
            adjuster,
            history: VecDeque::with_capacity(reward.window),
            buffer: ReplayBuffer::new(),
            reward_config: reward,
            ablations,
            action_rng: seeds.rng("actions"),
            replay_rng: seeds.rng("corrector_replay"),
            pending_temperatures: Vec::new(),
            pending_states: Vec::new(),
        })
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn corrector(&self) -> &Corrector {
        &self.corrector
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn ablations(&self) -> Ablations {
        self.ablations
    }

    /// Observes every instance of the batch, samples a temperature for each
    /// and records the transitions.
    pub fn observe_and_act(
        &mut self,
        batch: &[LabeledInstance],
        teacher_logits: &[&[f64]],
        student: &Mlp,
    ) -> Result<Vec<f64>> {
        check_len(
            "teacher logits per batch",
            batch.len(),
            teacher_logits.len(),
        )?;
        if !self.buffer.is_empty() {
            return Err(Error::domain(
                "acting again before the previous transitions were learned from",
            ));
        }
        self.pending_states.clear();
        self.pending_temperatures.clear();
        for (inst, tl) in batch.iter().zip(teacher_logits) {
            let teacher_probs = softmax_with_temperature(tl, 1.0)?;
            let student_probs = softmax_with_temperature(&student.predict(&inst.features)?, 1.0)?;
            let state = build_state(
                &teacher_probs,
                &student_probs,
                !self.ablations.uncertainty_off,
            )?;
            let action = self.agent.act(&state, &mut self.action_rng)?;
            self.buffer.push(TransitionRecord::new(state, &action));
            self.pending_states.push(state);
            self.pending_temperatures.push(action.temperature);
        }
        Ok(self.pending_temperatures.clone())
    }

    /// Warm-up scaling, reward redistribution, state updating and the PPO
    /// update for the transitions recorded by the last `observe_and_act`.
    pub fn learn(&mut self, raw_reward: f64, epoch: usize) -> Result<CycleReport> {
        let factor = warmup_factor(epoch, self.reward_config.warmup_n);
        let shaped = factor * raw_reward;
        let n = self.buffer.len();
        let mut report = CycleReport {
            raw_reward,
            shaped_reward: shaped,
            warmup_factor: factor,
            temperatures: std::mem::take(&mut self.pending_temperatures),
            observed_states: std::mem::take(&mut self.pending_states),
            buffer_len: n,
            ..CycleReport::default()
        };
        if n == 0 {
            return Ok(report);
        }

        if self.ablations.calibration_off {
            let mut rewards = vec![0.0; n];
            rewards[n - 1] = shaped;
            self.buffer.set_rewards(&rewards)?;
        } else {
            let states = self.buffer.states();
            let actions = self.buffer.raw_actions();
            if self.history.len() == self.reward_config.window {
                self.history.pop_front();
            }
            self.history
                .push_back(Episode::new(&states, &actions, shaped)?);
            let (loss, _) = corrector_train_step(
                self.history.make_contiguous(),
                &mut self.corrector,
                &mut self.corrector_opt,
                &self.reward_config,
                &mut self.replay_rng,
            )?;
            report.corrector_loss = Some(loss);

            let batch = calibrate_rewards(&states, &actions, raw_reward, shaped, &self.corrector)?;
            self.buffer.set_rewards(&batch.per_instance_rewards)?;
            let update = self.adjuster.update_states(&states, &batch.returns)?;
            report.updater_loss = Some(update.loss);
            if update.applied {
                self.buffer.set_states(&update.states)?;
                self.agent.refresh_buffer(&mut self.buffer)?;
            }
            report.calibration = Some(batch);
        }

        report.final_states = self.buffer.states();
        compute_advantages(&mut self.buffer, self.agent.config())?;
        let clears = self.buffer.clears();
        report.ppo = self.agent.ppo_update(&mut self.buffer)?;
        report.buffer_clears = self.buffer.clears() - clears;
        Ok(report)
    }
}
