//! Checkpoint format: the complete training state, serialized as JSON.
//!
//! A checkpoint carries everything a run needs to continue bit-identically on
//! the same build: every network and optimizer, both replay buffers, the
//! mid-episode loop state, and the random stream. The stream is ChaCha8, a
//! counter-based generator, captured as `(seed, word position, stream id)` so
//! the encoding stays portable across builds.

use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use shiro_core::diagnostics::FinalPositionLog;
use shiro_core::hrl::{GoalConditionedTransition, HighLevelTransition, SubgoalScheduler};
use shiro_core::soft_rl::LevelAgent;
use shiro_core::ReplayBuffer;

use crate::config::RunConfig;
use crate::TrainError;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Canonical encoding of a ChaCha8 stream position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32-byte seed, hex-encoded.
    pub seed: String,
    pub word_pos_hi: u64,
    pub word_pos_lo: u64,
    pub stream: u64,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let word_pos = rng.get_word_pos();
        Self {
            seed: hex::encode(rng.get_seed()),
            word_pos_hi: (word_pos >> 64) as u64,
            word_pos_lo: word_pos as u64,
            stream: rng.get_stream(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, TrainError> {
        let bytes = hex::decode(&self.seed)
            .map_err(|e| TrainError::Other(format!("corrupt rng seed: {e}")))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| TrainError::Other("rng seed must be 32 bytes".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(((self.word_pos_hi as u128) << 64) | self.word_pos_lo as u128);
        Ok(rng)
    }
}

/// The learner(s): two levels, or a single flat agent.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agents {
    Hierarchical { low: Box<LevelAgent>, high: Box<LevelAgent> },
    Flat { agent: Box<LevelAgent> },
}

impl Agents {
    /// The policy acting directly on the environment.
    pub fn action_level(&self) -> &LevelAgent {
        match self {
            Agents::Hierarchical { low, .. } => low,
            Agents::Flat { agent } => agent,
        }
    }
}

/// Running mean of a loss between metric records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossAccumulator {
    pub sum: f64,
    pub count: u64,
}

impl LossAccumulator {
    pub fn add(&mut self, value: f64) {
        self.sum += value;
        self.count += 1;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// An open (incomplete) sub-goal window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowState {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub subgoal: Vec<f64>,
}

/// Mid-episode bookkeeping needed for an exact resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub needs_reset: bool,
    pub state: Vec<f64>,
    pub episode_goal: Vec<f64>,
    pub episode_step: usize,
    pub episode_index: u64,
    pub scheduler: SubgoalScheduler,
    pub window: Option<WindowState>,
    pub kl_pending: bool,
    pub kl_last_mean: f64,
    pub kl_last_max: f64,
    pub last_metrics_step: Option<u64>,
    /// Wall seconds consumed by earlier segments of a resumed run.
    pub wall_time_offset: f64,
    pub acc_critic_low: LossAccumulator,
    pub acc_actor_low: LossAccumulator,
    pub acc_critic_high: LossAccumulator,
    pub acc_actor_high: LossAccumulator,
}

impl LoopState {
    pub fn fresh(c: usize) -> Self {
        Self {
            needs_reset: true,
            state: Vec::new(),
            episode_goal: Vec::new(),
            episode_step: 0,
            episode_index: 0,
            scheduler: SubgoalScheduler::new(c),
            window: None,
            kl_pending: false,
            kl_last_mean: 0.0,
            kl_last_max: 0.0,
            last_metrics_step: None,
            wall_time_offset: 0.0,
            acc_critic_low: LossAccumulator::default(),
            acc_actor_low: LossAccumulator::default(),
            acc_critic_high: LossAccumulator::default(),
            acc_actor_high: LossAccumulator::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RunConfig,
    pub env_step: u64,
    pub rng: RngState,
    pub agents: Agents,
    pub loop_state: LoopState,
    pub low_buffer: ReplayBuffer<GoalConditionedTransition>,
    pub high_buffer: ReplayBuffer<HighLevelTransition>,
    pub final_positions: FinalPositionLog,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    let file = std::fs::File::create(path)
        .map_err(|e| TrainError::Other(format!("cannot create {}: {e}", path.display())))?;
    serde_json::to_writer(BufWriter::new(file), ckpt)
        .map_err(|e| TrainError::Other(format!("checkpoint write: {e}")))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let file = std::fs::File::open(path)
        .map_err(|e| TrainError::Other(format!("cannot open {}: {e}", path.display())))?;
    let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| TrainError::Other(format!("corrupt checkpoint {}: {e}", path.display())))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(TrainError::Other(format!(
            "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    Ok(ckpt)
}
