//! Shared fixtures for the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiro_core::hrl::HighLevelTransition;
use shiro_core::nn::{MlpNetwork, OutputActivation};
use shiro_core::policies::{DeterministicPolicy, Policy, TwinCritic};
use shiro_core::soft_rl::{AgentLevelConfig, LevelAgent, PolicyKindConfig};

pub fn policy_net(hidden: usize) -> MlpNetwork {
    MlpNetwork::init(&[4, hidden, hidden, 2], OutputActivation::Tanh, 1)
}

pub fn deterministic_policy(hidden: usize) -> Policy {
    Policy::Deterministic(
        DeterministicPolicy::new(policy_net(hidden), vec![1.0, 1.0], vec![0.1, 0.1]).unwrap(),
    )
}

pub fn critic(hidden: usize) -> TwinCritic {
    TwinCritic::init(2, 2, 2, &[hidden, hidden], 2)
}

pub fn level_agent(hidden: usize, stochastic: bool) -> LevelAgent {
    let cfg = AgentLevelConfig {
        policy_kind: if stochastic {
            PolicyKindConfig::SquashedGaussian
        } else {
            PolicyKindConfig::Deterministic
        },
        hidden: vec![hidden, hidden],
        ..AgentLevelConfig::low_defaults()
    };
    LevelAgent::new(cfg, 2, 2, vec![1.0, 1.0], 3).unwrap()
}

/// A replay window of `c` random steps, for relabeling benchmarks.
pub fn random_window(c: usize, seed: u64) -> HighLevelTransition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = vec![vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]];
    for i in 0..c {
        let prev = states[i].clone();
        states.push(vec![
            prev[0] + rng.gen_range(-1.0..1.0),
            prev[1] + rng.gen_range(-1.0..1.0),
        ]);
    }
    let actions = (0..c)
        .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();
    let rewards = (0..c).map(|_| rng.gen_range(-20.0..0.0)).collect();
    HighLevelTransition::new(
        states,
        actions,
        rewards,
        vec![rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)],
        vec![0.0, 16.0],
        0.1,
        false,
    )
}
