//! Curiosity-driven prioritization for goal-conditioned reinforcement
//! learning.
//!
//! Trajectories are scored by how unlikely their achieved-goal path is under
//! a variational Gaussian mixture fitted to the replay buffer; rarer
//! trajectories get higher rank-based replay probability. Around that core
//! sit a hindsight relabeler, a DDPG agent with hand-written backprop, two
//! small multi-goal environments, metrics and an experiment harness that
//! compares uniform, curiosity-ranked and TD-error prioritized replay.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common cases.

pub mod agent;
pub mod density;
pub mod envs;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod metrics;
pub mod relabel;
pub mod replay;
pub mod scalar;

pub use error::{CdpError, Result, RunLocation};
pub use scalar::Scalar;

pub type Trajectory = mdp::Trajectory<f64>;
pub type Transition = mdp::Transition<f64>;
pub type GoalSpace = mdp::GoalSpace<f64>;
pub type MixtureModel = density::MixtureModel<f64>;
pub type VgmmConfig = density::VgmmConfig<f64>;
pub type ReplayBuffer = replay::ReplayBuffer<f64>;
pub type PerConfig = replay::PerConfig<f64>;
pub type Agent = agent::Agent<f64>;
pub type AgentConfig = agent::AgentConfig<f64>;
pub type EnvSpec = envs::EnvSpec<f64>;
pub type ExperimentConfig = harness::ExperimentConfig<f64>;

pub type TrajectoryF32 = mdp::Trajectory<f32>;
pub type TransitionF32 = mdp::Transition<f32>;
pub type MixtureModelF32 = density::MixtureModel<f32>;
pub type ReplayBufferF32 = replay::ReplayBuffer<f32>;
pub type AgentF32 = agent::Agent<f32>;
pub type EnvSpecF32 = envs::EnvSpec<f32>;
pub type ExperimentConfigF32 = harness::ExperimentConfig<f32>;

pub use density::{CovarianceKind, InitStrategy};
pub use harness::{run_comparison, run_experiment, Comparison, RunOutcome};
pub use mdp::ActionKind;
pub use metrics::{EvalReport, TdAggregate, TimingMode};
pub use relabel::HerConfig;
pub use replay::Strategy;
