//! Core algorithms for a two-level, entropy-regularized, goal-conditioned
//! reinforcement-learning agent on desk-scale continuous-control tasks.
//!
//! The crate is organized around the pieces a two-level agent needs:
//!
//! - [`nn`]: a minimal dense network engine (forward, exact analytic backward,
//!   Adam, Polyak averaging) that holds every policy and critic parameter.
//! - [`policies`]: deterministic policies with Gaussian exploration noise and
//!   squashed-Gaussian stochastic policies, plus the twin critic.
//! - [`env`]: goal-conditioned point-mass environments (an open arena and a
//!   U-shaped maze) with negative-distance rewards.
//! - [`hrl`]: sub-goal scheduling, the goal transition model, intrinsic
//!   rewards, replay buffers, and off-policy sub-goal relabeling.
//! - [`soft_rl`]: critic targets, actor updates (SAC-style and TD3-style),
//!   learned temperature, and the optional KL penalty on policy drift.
//! - [`diagnostics`]: closed-form policy KL between snapshots, the Pinsker
//!   conversion to a total-variation budget, and an empirical check that
//!   c-step abstracted transition distributions drift no more than `2*eps*c`.
//!
//! Everything is plain-value, single-writer, and deterministic given explicit
//! seeds: there is no hidden global randomness and no internal locking.

pub mod diagnostics;
pub mod env;
pub mod hrl;
pub mod nn;
pub mod policies;
pub mod soft_rl;

use thiserror::Error;

/// Errors surfaced by recoverable failure paths.
///
/// Shape/dimension violations on hot paths are programmer errors and panic
/// via `assert!` instead; see the individual module docs.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates a documented invariant.
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    /// An input lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A serialized artifact could not be understood.
    #[error("corrupt data: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use env::{GoalMode, MazeSpec, PointMazeEnv, PointReachEnv, UmdpEnv};
pub use hrl::{
    GoalConditionedTransition, HighLevelTransition, ReplayBuffer, SubgoalScheduler,
};
pub use nn::{AdamState, Gradients, MlpNetwork, OutputActivation};
pub use policies::{DeterministicPolicy, Policy, SquashedGaussianPolicy, TwinCritic};
pub use soft_rl::{AgentLevelConfig, LevelAgent, PolicyKindConfig, Temperature};
