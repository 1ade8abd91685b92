//! Two-level machinery: sub-goal scheduling, the goal transition model,
//! intrinsic rewards, replay storage, and off-policy sub-goal relabeling.
//!
//! The high level emits a sub-goal every `c` steps; between emissions the
//! sub-goal is advanced by `h(s, g, s') = s + g - s'` so it stays a fixed
//! absolute target expressed relative to the current state. Applying `h`
//! along a trajectory telescopes: `g_{t+k} = s_t + g_t - s_{t+k}`.
//!
//! High-level replay entries keep their full state/action window because
//! relabeling rescoring must re-evaluate the current low-level policy on
//! every stored step.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::policies::Policy;

/// Goal transition model: `g_next = s + g - s_next`.
pub fn goal_transition(s: &[f64], g: &[f64], s_next: &[f64]) -> Vec<f64> {
    assert!(
        s.len() == g.len() && g.len() == s_next.len(),
        "goal transition dimension mismatch"
    );
    s.iter()
        .zip(g)
        .zip(s_next)
        .map(|((si, gi), ni)| si + gi - ni)
        .collect()
}

/// Low-level reward: `-scale * || s + g - s_next ||_2`, zero exactly on
/// sub-goal attainment.
pub fn intrinsic_reward(s: &[f64], g: &[f64], s_next: &[f64], scale: f64) -> f64 {
    assert!(
        s.len() == g.len() && g.len() == s_next.len(),
        "intrinsic reward dimension mismatch"
    );
    let sq: f64 = s
        .iter()
        .zip(g)
        .zip(s_next)
        .map(|((si, gi), ni)| {
            let d = si + gi - ni;
            d * d
        })
        .sum();
    -scale * sq.sqrt()
}

/// High-level reward over one sub-goal window: `scale * sum(rewards)`.
pub fn accumulate_abstracted_reward(env_rewards: &[f64], scale: f64) -> f64 {
    assert!(!env_rewards.is_empty(), "empty reward window");
    scale * env_rewards.iter().sum::<f64>()
}

/// Tracks where we are inside the current sub-goal window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgoalScheduler {
    c: usize,
    current_subgoal: Vec<f64>,
    steps_since_emit: usize,
}

impl SubgoalScheduler {
    pub fn new(c: usize) -> Self {
        assert!(c > 0, "sub-goal interval must be positive");
        Self {
            c,
            current_subgoal: Vec::new(),
            steps_since_emit: 0,
        }
    }

    pub fn interval(&self) -> usize {
        self.c
    }

    pub fn subgoal(&self) -> &[f64] {
        &self.current_subgoal
    }

    /// True exactly when the next step must ask the high level for a fresh
    /// sub-goal.
    pub fn needs_emission(&self) -> bool {
        self.steps_since_emit == 0
    }

    pub fn begin_episode(&mut self) {
        self.steps_since_emit = 0;
        self.current_subgoal.clear();
    }

    pub fn emit(&mut self, subgoal: Vec<f64>) {
        assert!(self.needs_emission(), "sub-goal emitted mid-window");
        self.current_subgoal = subgoal;
    }

    /// Advances the window after an environment step. Between emissions the
    /// sub-goal evolves only via [`goal_transition`].
    pub fn after_step(&mut self, s: &[f64], s_next: &[f64]) {
        self.steps_since_emit += 1;
        if self.steps_since_emit == self.c {
            self.steps_since_emit = 0;
        } else {
            self.current_subgoal = goal_transition(s, &self.current_subgoal, s_next);
        }
    }
}

/// One low-level (or flat-agent) replay record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalConditionedTransition {
    pub state: Vec<f64>,
    pub goal: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_goal: Vec<f64>,
    pub done: bool,
}

/// One high-level replay record: a full sub-goal window.
///
/// `states` holds the `n + 1` states bracketing `n` actions; windows shorter
/// than `c` occur when an episode truncates mid-window and are relabeled over
/// their actual length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighLevelTransition {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub env_rewards: Vec<f64>,
    pub subgoal: Vec<f64>,
    pub episode_goal: Vec<f64>,
    pub reward_sum: f64,
    pub done: bool,
}

impl HighLevelTransition {
    pub fn new(
        states: Vec<Vec<f64>>,
        actions: Vec<Vec<f64>>,
        env_rewards: Vec<f64>,
        subgoal: Vec<f64>,
        episode_goal: Vec<f64>,
        reward_scale: f64,
        done: bool,
    ) -> Self {
        assert_eq!(states.len(), actions.len() + 1, "window shape mismatch");
        assert_eq!(env_rewards.len(), actions.len(), "reward window mismatch");
        let reward_sum = accumulate_abstracted_reward(&env_rewards, reward_scale);
        Self {
            states,
            actions,
            env_rewards,
            subgoal,
            episode_goal,
            reward_sum,
            done,
        }
    }

    pub fn start_state(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("window holds at least one state")
    }
}

/// Fixed-capacity ring buffer with uniform with-replacement sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self {
            capacity,
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn as_slice(&self) -> &[T] {
        &self.items
    }

    /// Appends, evicting the oldest entry once full.
    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    /// `n` i.i.d. uniform draws with replacement. Panics on an empty buffer.
    pub fn sample<'a>(&'a self, n: usize, rng: &mut ChaCha8Rng) -> Vec<&'a T> {
        assert!(!self.items.is_empty(), "cannot sample from an empty buffer");
        (0..n)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect()
    }
}

/// Builds the relabeling candidate set for one high-level window: the stored
/// sub-goal, the realized displacement `s_end - s_0`, and `n_noisy` Gaussian
/// perturbations of the displacement, all clipped to the sub-goal box.
pub fn relabel_candidates(
    hl: &HighLevelTransition,
    subgoal_limit: f64,
    noise_sigma: f64,
    n_noisy: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let dim = hl.subgoal.len();
    let diff: Vec<f64> = hl
        .final_state()
        .iter()
        .zip(hl.start_state())
        .map(|(e, s)| e - s)
        .collect();
    let clip = |v: Vec<f64>| -> Vec<f64> {
        v.into_iter()
            .map(|x| x.clamp(-subgoal_limit, subgoal_limit))
            .collect()
    };
    let mut candidates = Vec::with_capacity(2 + n_noisy);
    candidates.push(clip(hl.subgoal.clone()));
    candidates.push(clip(diff.clone()));
    for _ in 0..n_noisy {
        let sample: Vec<f64> = (0..dim)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                diff[i] + noise_sigma * z
            })
            .collect();
        candidates.push(clip(sample));
    }
    candidates
}

/// Log-likelihood-style fit of a candidate sub-goal: the candidate is rolled
/// forward along the stored states via [`goal_transition`] and the stored
/// actions are scored under the policy. Deterministic policies use the
/// negative squared action error (the Gaussian log-likelihood up to
/// constants); stochastic policies use the exact log-density.
pub fn relabel_score(hl: &HighLevelTransition, low_policy: &Policy, candidate: &[f64]) -> f64 {
    assert_eq!(
        hl.states.len(),
        hl.actions.len() + 1,
        "window shape mismatch"
    );
    let mut goal = candidate.to_vec();
    let mut score = 0.0;
    for (i, action) in hl.actions.iter().enumerate() {
        match low_policy {
            Policy::Deterministic(p) => {
                let mu = p.action(&hl.states[i], &goal);
                score -= action
                    .iter()
                    .zip(&mu)
                    .map(|(a, m)| (a - m) * (a - m))
                    .sum::<f64>();
            }
            Policy::SquashedGaussian(p) => {
                score += p
                    .log_prob(&hl.states[i], &goal, action)
                    .unwrap_or(f64::NEG_INFINITY);
            }
        }
        goal = goal_transition(&hl.states[i], &goal, &hl.states[i + 1]);
    }
    score
}

/// Picks the best-scoring candidate; ties prefer the stored sub-goal, then
/// the lowest candidate index, so replay stays deterministic.
pub fn relabel_subgoal_from(
    hl: &HighLevelTransition,
    low_policy: &Policy,
    candidates: &[Vec<f64>],
) -> Vec<f64> {
    assert!(!candidates.is_empty(), "empty candidate set");
    let mut best = 0;
    let mut best_score = relabel_score(hl, low_policy, &candidates[0]);
    for (i, cand) in candidates.iter().enumerate().skip(1) {
        let score = relabel_score(hl, low_policy, cand);
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    candidates[best].clone()
}

/// Off-policy sub-goal correction with the standard candidate set: stored
/// goal + realized displacement + 8 noisy displacements, noise scaled to
/// half the sub-goal half-range.
pub fn relabel_subgoal(
    hl: &HighLevelTransition,
    low_policy: &Policy,
    subgoal_limit: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let candidates = relabel_candidates(hl, subgoal_limit, 0.5 * subgoal_limit, 8, rng);
    relabel_subgoal_from(hl, low_policy, &candidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{MlpNetwork, OutputActivation};
    use crate::policies::DeterministicPolicy;
    use rand::SeedableRng;

    #[test]
    fn goal_transition_arithmetic() {
        assert_eq!(
            goal_transition(&[1.0, 2.0], &[3.0, 4.0], &[2.0, 3.0]),
            vec![2.0, 3.0]
        );
        // No movement leaves the goal fixed.
        assert_eq!(
            goal_transition(&[1.0, 2.0], &[3.0, 4.0], &[1.0, 2.0]),
            vec![3.0, 4.0]
        );
    }

    #[test]
    fn goal_transition_telescopes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let s0: Vec<f64> = (0..2).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let g0: Vec<f64> = (0..2).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mut s = s0.clone();
            let mut g = g0.clone();
            for _ in 0..10 {
                let s_next: Vec<f64> = (0..2).map(|_| rng.gen_range(-5.0..5.0)).collect();
                g = goal_transition(&s, &g, &s_next);
                s = s_next;
            }
            for i in 0..2 {
                let expected = s0[i] + g0[i] - s[i];
                assert!((g[i] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn intrinsic_reward_examples() {
        assert_eq!(intrinsic_reward(&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0], 1.0), 0.0);
        assert_eq!(intrinsic_reward(&[0.0, 0.0], &[3.0, 4.0], &[0.0, 0.0], 1.0), -5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let s: Vec<f64> = (0..2).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let g: Vec<f64> = (0..2).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let n: Vec<f64> = (0..2).map(|_| rng.gen_range(-5.0..5.0)).collect();
            assert!(intrinsic_reward(&s, &g, &n, 1.0) <= 0.0);
        }
    }

    #[test]
    fn abstracted_reward_examples() {
        let rewards = vec![-16.0; 10];
        assert!((accumulate_abstracted_reward(&rewards, 0.1) + 16.0).abs() < 1e-12);
        assert_eq!(accumulate_abstracted_reward(&rewards, 0.0), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let rewards: Vec<f64> = (0..7).map(|_| rng.gen_range(-20.0..0.0)).collect();
            let mut oracle = 0.0;
            for r in &rewards {
                oracle += r;
            }
            oracle *= 0.1;
            assert!((accumulate_abstracted_reward(&rewards, 0.1) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "empty reward window")]
    fn abstracted_reward_rejects_empty_window() {
        accumulate_abstracted_reward(&[], 0.1);
    }

    #[test]
    fn scheduler_emits_on_cadence() {
        let mut sched = SubgoalScheduler::new(10);
        for episode_len in [40usize, 45, 1, 10, 11] {
            sched.begin_episode();
            let mut emissions = 0;
            let mut s = vec![0.0, 0.0];
            for t in 0..episode_len {
                if sched.needs_emission() {
                    sched.emit(vec![1.0, 1.0]);
                    emissions += 1;
                    assert_eq!(t % 10, 0);
                }
                let s_next = vec![s[0] + 0.1, s[1]];
                sched.after_step(&s, &s_next);
                s = s_next;
            }
            assert_eq!(emissions, episode_len.div_ceil(10), "len {episode_len}");
        }
    }

    #[test]
    fn scheduler_advances_subgoal_between_emissions() {
        let mut sched = SubgoalScheduler::new(5);
        sched.begin_episode();
        sched.emit(vec![3.0, 0.0]);
        let s = vec![0.0, 0.0];
        let s_next = vec![1.0, 0.0];
        sched.after_step(&s, &s_next);
        // Absolute target was (3, 0); from (1, 0) the remaining offset is (2, 0).
        assert_eq!(sched.subgoal(), &[2.0, 0.0]);
        assert!(!sched.needs_emission());
    }

    #[test]
    fn buffer_ring_semantics() {
        let mut buf = ReplayBuffer::new(5);
        for i in 0..6 {
            buf.push(i);
        }
        assert_eq!(buf.len(), 5);
        assert!(!buf.as_slice().contains(&0), "oldest entry should be evicted");
        assert!(buf.as_slice().contains(&5));
    }

    #[test]
    fn buffer_single_item_sampling_and_empty_batch() {
        let mut buf = ReplayBuffer::new(3);
        buf.push(42);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(buf.sample(1, &mut rng), vec![&42]);
        assert!(buf.sample(0, &mut rng).is_empty());
        // Oversampling is allowed; duplicates expected.
        assert_eq!(buf.sample(4, &mut rng).len(), 4);
    }

    #[test]
    #[should_panic(expected = "empty buffer")]
    fn buffer_rejects_sampling_when_empty() {
        let buf: ReplayBuffer<u32> = ReplayBuffer::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        buf.sample(1, &mut rng);
    }

    #[test]
    fn buffer_sampling_is_uniform() {
        let mut buf = ReplayBuffer::new(100);
        for i in 0..100 {
            buf.push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 100];
        let n = 100_000;
        for item in buf.sample(n, &mut rng) {
            counts[*item] += 1;
        }
        let expected = n as f64 / 100.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 99% quantile of chi-squared with 99 degrees of freedom.
        assert!(chi2 < 134.64, "chi2 = {chi2}");
    }

    fn toy_window(policy: &Policy, candidate: &[f64]) -> HighLevelTransition {
        // States drift; actions are exactly what the policy would do when
        // conditioned on `candidate` rolled through the window.
        let states: Vec<Vec<f64>> = (0..=10)
            .map(|i| vec![0.3 * i as f64, -0.1 * i as f64])
            .collect();
        let mut goal = candidate.to_vec();
        let mut actions = Vec::new();
        for i in 0..10 {
            let a = match policy {
                Policy::Deterministic(p) => p.action(&states[i], &goal),
                Policy::SquashedGaussian(_) => unreachable!("toy window uses deterministic"),
            };
            actions.push(a);
            goal = goal_transition(&states[i], &goal, &states[i + 1]);
        }
        let rewards = vec![-1.0; 10];
        HighLevelTransition::new(
            states,
            actions,
            rewards,
            vec![5.0, 5.0],
            vec![0.0, 16.0],
            0.1,
            false,
        )
    }

    fn det_low_policy(seed: u64) -> Policy {
        let net = MlpNetwork::init(&[4, 16, 2], OutputActivation::Tanh, seed);
        Policy::Deterministic(DeterministicPolicy::new(net, vec![1.0, 1.0], vec![0.1, 0.1]).unwrap())
    }

    #[test]
    fn relabel_exact_match_candidate_wins_with_score_zero() {
        let policy = det_low_policy(11);
        let hl = toy_window(&policy, &[3.0, -1.0]);
        // The displacement candidate equals final - start = (3, -1), which is
        // exactly the goal the actions were generated from.
        let candidates = vec![vec![5.0, 5.0], vec![3.0, -1.0], vec![-2.0, 4.0]];
        let chosen = relabel_subgoal_from(&hl, &policy, &candidates);
        assert_eq!(chosen, vec![3.0, -1.0]);
        assert!(relabel_score(&hl, &policy, &chosen).abs() < 1e-18);
    }

    #[test]
    fn relabel_never_beaten_by_rescoring() {
        let policy = det_low_policy(13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..50 {
            let states: Vec<Vec<f64>> = {
                let mut s = vec![vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]];
                for i in 0..10 {
                    let prev: &Vec<f64> = &s[i];
                    s.push(vec![
                        prev[0] + rng.gen_range(-1.0..1.0),
                        prev[1] + rng.gen_range(-1.0..1.0),
                    ]);
                }
                s
            };
            let actions: Vec<Vec<f64>> = (0..10)
                .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect();
            let rewards: Vec<f64> = (0..10).map(|_| rng.gen_range(-20.0..0.0)).collect();
            let hl = HighLevelTransition::new(
                states,
                actions,
                rewards,
                vec![rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)],
                vec![0.0, 16.0],
                0.1,
                false,
            );
            let candidates = relabel_candidates(&hl, 10.0, 5.0, 8, &mut rng);
            let chosen = relabel_subgoal_from(&hl, &policy, &candidates);
            let chosen_score = relabel_score(&hl, &policy, &chosen);

            // Independent brute-force rescoring of the same candidate set.
            for cand in &candidates {
                let mut goal = cand.clone();
                let mut score = 0.0;
                for i in 0..hl.actions.len() {
                    let mu = match &policy {
                        Policy::Deterministic(p) => p.action(&hl.states[i], &goal),
                        _ => unreachable!(),
                    };
                    for d in 0..2 {
                        let e = hl.actions[i][d] - mu[d];
                        score -= e * e;
                    }
                    for d in 0..2 {
                        goal[d] = hl.states[i][d] + goal[d] - hl.states[i + 1][d];
                    }
                }
                assert!(
                    score <= chosen_score + 1e-12,
                    "candidate {cand:?} scored {score} > chosen {chosen_score}"
                );
            }
        }
    }

    #[test]
    fn relabel_degenerate_candidates_prefer_stored_goal() {
        let policy = det_low_policy(15);
        // Stored goal equals the displacement, and zero noise collapses every
        // candidate onto the same point.
        let states: Vec<Vec<f64>> = (0..=10).map(|i| vec![0.2 * i as f64, 0.0]).collect();
        let actions = vec![vec![0.2, 0.0]; 10];
        let rewards = vec![-1.0; 10];
        let hl = HighLevelTransition::new(
            states,
            actions,
            rewards,
            vec![2.0, 0.0],
            vec![0.0, 16.0],
            0.1,
            false,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let candidates = relabel_candidates(&hl, 10.0, 0.0, 8, &mut rng);
        assert!(candidates.iter().all(|c| c == &vec![2.0, 0.0]));
        let chosen = relabel_subgoal_from(&hl, &policy, &candidates);
        assert_eq!(chosen, hl.subgoal);
    }

    #[test]
    fn high_level_reward_sum_is_recomputable() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let n = rng.gen_range(1..=10);
            let states: Vec<Vec<f64>> = (0..=n).map(|i| vec![i as f64, 0.0]).collect();
            let actions = vec![vec![1.0, 0.0]; n];
            let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..0.0)).collect();
            let hl = HighLevelTransition::new(
                states,
                actions,
                rewards.clone(),
                vec![1.0, 0.0],
                vec![0.0, 16.0],
                0.1,
                false,
            );
            assert_eq!(hl.reward_sum, accumulate_abstracted_reward(&rewards, 0.1));
        }
    }
}
