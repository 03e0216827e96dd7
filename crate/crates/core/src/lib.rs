//! Knowledge distillation where a PPO agent chooses the softmax temperature
//! for every training instance.
//!
//! The crate is organised bottom-up:
//!
//! * [`numkernel`] dense networks, losses and optimizers;
//! * [`distill`] teacher training and the per-instance-temperature KD loss;
//! * [`state`] the agent's observation of an instance;
//! * [`agent`] Gaussian-policy PPO actor-critic emitting temperatures;
//! * [`reward`] batch reward, warm-up, reward redistribution and state updating;
//! * [`exploration`] entropy ranking, band selection and mix-up;
//! * [`controller`] glue that runs one agent-learning cycle per batch;
//! * [`harness`] configuration, datasets, the training loop and metrics.

pub mod agent;
pub mod controller;
pub mod distill;
pub mod error;
pub mod exploration;
pub mod harness;
pub mod numkernel;
pub mod reward;
pub mod rng;
pub mod state;

pub use error::{Error, Result};
