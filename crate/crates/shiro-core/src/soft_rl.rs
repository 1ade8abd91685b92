//! Gradient-update rules for one hierarchy level.
//!
//! A [`LevelAgent`] bundles an actor (either policy family), a twin critic
//! with Polyak-averaged targets, Adam state for each network, and an
//! (optionally learned) entropy temperature. The free functions implement the
//! individual update rules; `LevelAgent::update` sequences them at the
//! configured actor delay.
//!
//! Critic targets bootstrap as
//! `y = r + gamma * (1 - done) * (min_i Q'_i(s', g', a') - alpha * log pi(a'|s', g'))`
//! with `a'` freshly sampled for stochastic actors; deterministic actors use
//! the target actor plus clipped smoothing noise and no entropy term. The
//! entropy term is structurally absent from deterministic updates, which is
//! what makes variant gating auditable: a level that never constructs a
//! stochastic actor can never read its temperature.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::hrl::GoalConditionedTransition;
use crate::nn::{adam_step, polyak_update, AdamState, Gradients, MlpNetwork, OutputActivation};
use crate::policies::{DeterministicPolicy, Policy, SquashedGaussianPolicy, TwinCritic};
use crate::{Error, Result};

/// Borrowed view of one replay transition, shared by both hierarchy levels
/// (the high level's "action" is its emitted sub-goal).
#[derive(Debug, Clone, Copy)]
pub struct TransitionView<'a> {
    pub state: &'a [f64],
    pub goal: &'a [f64],
    pub action: &'a [f64],
    pub reward: f64,
    pub next_state: &'a [f64],
    pub next_goal: &'a [f64],
    pub done: bool,
}

impl<'a> From<&'a GoalConditionedTransition> for TransitionView<'a> {
    fn from(t: &'a GoalConditionedTransition) -> Self {
        Self {
            state: &t.state,
            goal: &t.goal,
            action: &t.action,
            reward: t.reward,
            next_state: &t.next_state,
            next_goal: &t.next_goal,
            done: t.done,
        }
    }
}

/// Log-parameterized entropy coefficient with a target ("minimum desired")
/// entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    pub log_alpha: f64,
    pub target_entropy: f64,
    pub learnable: bool,
    pub learning_rate: f64,
}

impl Temperature {
    pub fn new(alpha_init: f64, learnable: bool, target_entropy: f64, learning_rate: f64) -> Result<Self> {
        if alpha_init <= 0.0 {
            return Err(Error::InvalidConfig("initial temperature must be positive".into()));
        }
        if learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("temperature learning rate must be positive".into()));
        }
        Ok(Self {
            log_alpha: alpha_init.ln(),
            target_entropy,
            learnable,
            learning_rate,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// One gradient step on `J(alpha) = E[-alpha * (log pi + target)]` with
    /// respect to `log_alpha`. The step direction satisfies
    /// `sign(delta log_alpha) == sign(target - batch_entropy)` exactly, which
    /// is why this is plain gradient descent rather than Adam: momentum could
    /// transiently flip the sign.
    pub fn update(&mut self, batch_log_probs: &[f64]) {
        assert!(self.learnable, "temperature update on a constant temperature");
        assert!(!batch_log_probs.is_empty(), "empty log-prob batch");
        let mean_lp = batch_log_probs.iter().sum::<f64>() / batch_log_probs.len() as f64;
        // dJ/dlog_alpha = -alpha * E[log pi + target]
        let grad = -self.alpha() * (mean_lp + self.target_entropy);
        self.log_alpha -= self.learning_rate * grad;
    }
}

/// Which policy family a level deploys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKindConfig {
    Deterministic,
    SquashedGaussian,
}

/// Complete per-level hyperparameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentLevelConfig {
    pub policy_kind: PolicyKindConfig,
    pub alpha_init: f64,
    pub alpha_learnable: bool,
    /// Entropy target for learned temperatures; `None` means `-action_dim`.
    pub target_entropy: Option<f64>,
    /// Environment steps between gradient triggers.
    pub train_interval: usize,
    /// Environment steps between Polyak target updates.
    pub target_update_interval: usize,
    /// Actor (and temperature) update every this many gradient triggers.
    pub actor_delay: u64,
    pub gamma: f64,
    /// Soft KL-penalty coefficient; 0 disables the penalty.
    pub alpha_kl: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temperature_lr: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub reward_scale: f64,
    /// Exploration noise as a fraction of the action scale.
    pub exploration_sigma_rel: f64,
    /// Absolute per-dimension override for the exploration noise.
    pub exploration_sigma_abs: Option<Vec<f64>>,
    /// Target-policy smoothing noise, as fractions of the action scale.
    pub smoothing_sigma_rel: f64,
    pub smoothing_clip_rel: f64,
    pub tau: f64,
}

impl Default for AgentLevelConfig {
    fn default() -> Self {
        Self {
            policy_kind: PolicyKindConfig::Deterministic,
            alpha_init: 0.1,
            alpha_learnable: false,
            target_entropy: None,
            train_interval: 1,
            target_update_interval: 1,
            actor_delay: 2,
            gamma: 0.99,
            alpha_kl: 0.0,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            temperature_lr: 3e-4,
            batch_size: 128,
            hidden: vec![64, 64],
            reward_scale: 1.0,
            exploration_sigma_rel: 0.1,
            exploration_sigma_abs: None,
            smoothing_sigma_rel: 0.2,
            smoothing_clip_rel: 0.5,
            tau: 0.005,
        }
    }
}

impl AgentLevelConfig {
    /// Low-level defaults: every-step training, unscaled rewards.
    pub fn low_defaults() -> Self {
        Self::default()
    }

    /// High-level defaults: ten-step cadence and 0.1 reward scaling.
    pub fn high_defaults() -> Self {
        Self {
            alpha_init: 1.0,
            train_interval: 10,
            target_update_interval: 10,
            reward_scale: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_interval == 0 || self.target_update_interval == 0 {
            return Err(Error::InvalidConfig("update intervals must be positive".into()));
        }
        if self.actor_delay == 0 {
            return Err(Error::InvalidConfig("actor delay must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!("gamma {} must lie in (0, 1)", self.gamma)));
        }
        if self.alpha_kl < 0.0 {
            return Err(Error::InvalidConfig("alpha_kl must be non-negative".into()));
        }
        if self.alpha_init <= 0.0 {
            return Err(Error::InvalidConfig("alpha_init must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden sizes must be positive".into()));
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("temperature_lr", self.temperature_lr),
            ("exploration_sigma_rel", self.exploration_sigma_rel),
            ("smoothing_sigma_rel", self.smoothing_sigma_rel),
            ("smoothing_clip_rel", self.smoothing_clip_rel),
        ] {
            if v <= 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig("tau must lie in (0, 1]".into()));
        }
        if let Some(abs) = &self.exploration_sigma_abs {
            if abs.iter().any(|&s| s <= 0.0) {
                return Err(Error::InvalidConfig("absolute exploration sigma must be positive".into()));
            }
        }
        Ok(())
    }
}

/// The policy evaluated inside a critic target.
pub enum TargetPolicy<'a> {
    /// Fresh reparameterized samples from the current stochastic actor, with
    /// the entropy term `-alpha * log pi`.
    Stochastic { actor: &'a SquashedGaussianPolicy, alpha: f64 },
    /// Target actor mean plus clipped smoothing noise; no entropy term.
    Deterministic {
        actor_target: &'a DeterministicPolicy,
        smoothing_sigma: &'a [f64],
        smoothing_clip: &'a [f64],
    },
}

/// Bootstrapped critic targets for a batch; no gradient flows through these.
pub fn compute_critic_targets(
    batch: &[TransitionView],
    critic_target: &TwinCritic,
    policy: &TargetPolicy,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    batch
        .iter()
        .map(|t| {
            if t.done {
                return t.reward;
            }
            let boot = match policy {
                TargetPolicy::Stochastic { actor, alpha } => {
                    let (a_next, log_prob) = actor.sample(t.next_state, t.next_goal, rng);
                    critic_target.min_q(t.next_state, t.next_goal, &a_next) - alpha * log_prob
                }
                TargetPolicy::Deterministic {
                    actor_target,
                    smoothing_sigma,
                    smoothing_clip,
                } => {
                    let mut a_next = actor_target.action(t.next_state, t.next_goal);
                    for i in 0..a_next.len() {
                        let z: f64 = rng.sample(StandardNormal);
                        let noise = (smoothing_sigma[i] * z).clamp(-smoothing_clip[i], smoothing_clip[i]);
                        let scale = actor_target.action_scale[i];
                        a_next[i] = (a_next[i] + noise).clamp(-scale, scale);
                    }
                    critic_target.min_q(t.next_state, t.next_goal, &a_next)
                }
            };
            t.reward + gamma * boot
        })
        .collect()
}

/// One Adam step on `MSE(q1, y) + MSE(q2, y)`; returns the pre-step loss.
pub fn update_critics(
    critic: &mut TwinCritic,
    q1_opt: &mut AdamState,
    q2_opt: &mut AdamState,
    batch: &[TransitionView],
    targets: &[f64],
) -> f64 {
    assert_eq!(batch.len(), targets.len(), "target count mismatch");
    assert!(!batch.is_empty(), "empty batch");
    let n = batch.len() as f64;
    let mut g1 = Gradients::zeros_like(&critic.q1);
    let mut g2 = Gradients::zeros_like(&critic.q2);
    let mut loss = 0.0;
    for (t, &y) in batch.iter().zip(targets) {
        let input = TwinCritic::input(t.state, t.goal, t.action);
        for (net, grads) in [(&critic.q1, &mut g1), (&critic.q2, &mut g2)] {
            let (out, _) = net.backward_map(&input, |out| vec![2.0 * (out[0] - y)], grads, 1.0 / n);
            let err = out[0] - y;
            loss += err * err / n;
        }
    }
    adam_step(&mut critic.q1, &g1, q1_opt);
    adam_step(&mut critic.q2, &g2, q2_opt);
    loss
}

/// Diagonal-Gaussian `KL(p || q)` summed over dimensions.
///
/// This is the penalty-side formula; the diagnostics module carries an
/// independent implementation so the two can cross-check each other.
fn kl_diag_gaussian(mu_p: &[f64], sigma_p: &[f64], mu_q: &[f64], sigma_q: &[f64]) -> f64 {
    let mut kl = 0.0;
    for i in 0..mu_p.len() {
        let ratio = sigma_q[i] / sigma_p[i];
        let dm = mu_p[i] - mu_q[i];
        kl += ratio.ln() + (sigma_p[i] * sigma_p[i] + dm * dm) / (2.0 * sigma_q[i] * sigma_q[i]) - 0.5;
    }
    kl
}

/// Soft-constraint loss assembly:
/// `L' = L + alpha_kl * mean_s KL(pi_new(.|s) || pi_old(.|s))`.
///
/// Both snapshots must be the same policy family; the KL is computed between
/// pre-squash Gaussians for the stochastic family and between the
/// fixed-covariance exploration Gaussians for the deterministic one.
pub fn kl_penalized_actor_loss(
    base_loss: f64,
    policy_old: &Policy,
    policy_new: &Policy,
    states: &[Vec<f64>],
    goals: &[Vec<f64>],
    alpha_kl: f64,
) -> f64 {
    assert!(alpha_kl >= 0.0, "alpha_kl must be non-negative");
    assert_eq!(states.len(), goals.len(), "state/goal count mismatch");
    if alpha_kl == 0.0 || states.is_empty() {
        return base_loss;
    }
    let mut total = 0.0;
    for (s, g) in states.iter().zip(goals) {
        let (mu_new, sigma_new) = policy_new.policy_gaussian(s, g);
        let (mu_old, sigma_old) = policy_old.policy_gaussian(s, g);
        total += kl_diag_gaussian(&mu_new, &sigma_new, &mu_old, &sigma_old);
    }
    base_loss + alpha_kl * total / states.len() as f64
}

/// One Adam step on the reparameterized SAC actor objective
/// `E[alpha * log pi(a|s,g) - min_i Q_i(s, g, a)]`, optionally with the soft
/// KL penalty toward a reference snapshot. Returns the pre-step loss and the
/// sampled log-probabilities (the temperature update consumes those).
pub fn update_actor_sac(
    policy: &mut SquashedGaussianPolicy,
    opt: &mut AdamState,
    critic: &TwinCritic,
    batch: &[TransitionView],
    alpha: f64,
    kl_penalty: Option<(&SquashedGaussianPolicy, f64)>,
    rng: &mut ChaCha8Rng,
) -> (f64, Vec<f64>) {
    assert!(!batch.is_empty(), "empty batch");
    let n = batch.len() as f64;
    let k = policy.action_dim();
    let mut grads = Gradients::zeros_like(&policy.net);
    let mut loss = 0.0;
    let mut log_probs = Vec::with_capacity(batch.len());
    for t in batch {
        let noise = policy.draw_noise(rng);
        let path = policy.sample_path(t.state, t.goal, &noise);
        let input = TwinCritic::input(t.state, t.goal, &path.action);
        let q1 = critic.q1.forward(&input)[0];
        let q2 = critic.q2.forward(&input)[0];
        let (q_min, q_head) = if q1 <= q2 { (q1, &critic.q1) } else { (q2, &critic.q2) };
        loss += (alpha * path.log_prob - q_min) / n;
        log_probs.push(path.log_prob);

        // dL/da through the selected critic head only; its parameter
        // gradients are discarded.
        let mut sink = Gradients::zeros_like(q_head);
        let (_, d_input) = q_head.backward_map(&input, |_| vec![1.0], &mut sink, 0.0);
        let a_off = t.state.len() + t.goal.len();
        let d_action: Vec<f64> = d_input[a_off..].iter().map(|g| -g).collect();
        let mut head_grad = path.head_gradient(&d_action, alpha, &policy.action_scale);

        if let Some((old, coeff)) = kl_penalty {
            let (mu_old, sigma_old) = old.gaussian_params(t.state, t.goal);
            let (mu_new, sigma_new) = (path.mu(), path.sigma());
            loss += coeff * kl_diag_gaussian(mu_new, sigma_new, &mu_old, &sigma_old) / n;
            for i in 0..k {
                let var_old = sigma_old[i] * sigma_old[i];
                head_grad[i] += coeff * (mu_new[i] - mu_old[i]) / var_old;
                if path.std_grad_open(i) {
                    let d_sigma = sigma_new[i] / var_old - 1.0 / sigma_new[i];
                    head_grad[k + i] += coeff * d_sigma * sigma_new[i];
                }
            }
        }

        let policy_input = [t.state, t.goal].concat();
        policy.net.backward_accumulate(&policy_input, &head_grad, &mut grads, 1.0 / n);
    }
    adam_step(&mut policy.net, &grads, opt);
    (loss, log_probs)
}

/// One Adam step maximizing `E[Q_1(s, g, mu(s, g))]` (deterministic policy
/// gradient), optionally with the soft KL penalty. Returns the pre-step loss
/// `-E[Q_1] (+ penalty)`.
pub fn update_actor_td3(
    policy: &mut DeterministicPolicy,
    opt: &mut AdamState,
    critic: &TwinCritic,
    batch: &[TransitionView],
    kl_penalty: Option<(&DeterministicPolicy, f64)>,
) -> f64 {
    assert!(!batch.is_empty(), "empty batch");
    let n = batch.len() as f64;
    let mut grads = Gradients::zeros_like(&policy.net);
    let mut loss = 0.0;
    for t in batch {
        let action = policy.action(t.state, t.goal);
        let input = TwinCritic::input(t.state, t.goal, &action);
        let mut sink = Gradients::zeros_like(&critic.q1);
        let (q, d_input) = critic.q1.backward_map(&input, |_| vec![1.0], &mut sink, 0.0);
        loss -= q[0] / n;
        let a_off = t.state.len() + t.goal.len();
        let mut head_grad: Vec<f64> = (0..action.len())
            .map(|i| -d_input[a_off + i] * policy.action_scale[i])
            .collect();

        if let Some((old, coeff)) = kl_penalty {
            let mu_old = old.action(t.state, t.goal);
            let mut kl = 0.0;
            for i in 0..action.len() {
                let var_old = old.exploration_sigma[i] * old.exploration_sigma[i];
                let dm = action[i] - mu_old[i];
                kl += dm * dm / (2.0 * var_old);
                head_grad[i] += coeff * dm / var_old * policy.action_scale[i];
            }
            loss += coeff * kl / n;
        }

        let policy_input = [t.state, t.goal].concat();
        policy.net.backward_accumulate(&policy_input, &head_grad, &mut grads, 1.0 / n);
    }
    adam_step(&mut policy.net, &grads, opt);
    loss
}

/// Losses observed during one gradient trigger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
}

/// One hierarchy level's complete learner state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelAgent {
    pub cfg: AgentLevelConfig,
    pub actor: Policy,
    /// Polyak copy of the actor; maintained for the deterministic family,
    /// which evaluates it inside critic targets.
    pub actor_target: Option<Policy>,
    pub critic: TwinCritic,
    pub critic_target: TwinCritic,
    pub actor_opt: AdamState,
    pub q1_opt: AdamState,
    pub q2_opt: AdamState,
    pub temperature: Temperature,
    /// Reference snapshot for the soft KL penalty, refreshed by the caller.
    pub kl_reference: Option<Policy>,
    pub update_count: u64,
    /// Times the temperature entered a target or actor computation.
    pub alpha_uses: u64,
}

impl LevelAgent {
    pub fn new(
        cfg: AgentLevelConfig,
        state_dim: usize,
        goal_dim: usize,
        action_scale: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let action_dim = action_scale.len();
        let input_dim = state_dim + goal_dim;
        let mut policy_sizes = vec![input_dim];
        policy_sizes.extend_from_slice(&cfg.hidden);

        let exploration_sigma = match &cfg.exploration_sigma_abs {
            Some(abs) => {
                if abs.len() != action_dim {
                    return Err(Error::InvalidConfig(
                        "absolute exploration sigma length must match action dimension".into(),
                    ));
                }
                abs.clone()
            }
            None => action_scale.iter().map(|s| s * cfg.exploration_sigma_rel).collect(),
        };

        let actor = match cfg.policy_kind {
            PolicyKindConfig::Deterministic => {
                let mut sizes = policy_sizes.clone();
                sizes.push(action_dim);
                let net = MlpNetwork::init(&sizes, OutputActivation::Tanh, seed);
                Policy::Deterministic(DeterministicPolicy::new(
                    net,
                    action_scale.clone(),
                    exploration_sigma,
                )?)
            }
            PolicyKindConfig::SquashedGaussian => {
                let mut sizes = policy_sizes.clone();
                sizes.push(2 * action_dim);
                let net = MlpNetwork::init(&sizes, OutputActivation::Identity, seed);
                Policy::SquashedGaussian(SquashedGaussianPolicy::new(net, action_scale.clone())?)
            }
        };
        let actor_target = match &actor {
            Policy::Deterministic(_) => Some(actor.clone()),
            Policy::SquashedGaussian(_) => None,
        };
        let critic = TwinCritic::init(
            state_dim,
            goal_dim,
            action_dim,
            &cfg.hidden,
            seed.wrapping_add(1),
        );
        let critic_target = critic.clone();
        let actor_net = match &actor {
            Policy::Deterministic(p) => &p.net,
            Policy::SquashedGaussian(p) => &p.net,
        };
        let actor_opt = AdamState::new(actor_net, cfg.actor_lr);
        let q1_opt = AdamState::new(&critic.q1, cfg.critic_lr);
        let q2_opt = AdamState::new(&critic.q2, cfg.critic_lr);
        let target_entropy = cfg.target_entropy.unwrap_or(-(action_dim as f64));
        let temperature = Temperature::new(
            cfg.alpha_init,
            cfg.alpha_learnable,
            target_entropy,
            cfg.temperature_lr,
        )?;
        Ok(Self {
            cfg,
            actor,
            actor_target,
            critic,
            critic_target,
            actor_opt,
            q1_opt,
            q2_opt,
            temperature,
            kl_reference: None,
            update_count: 0,
            alpha_uses: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.temperature.alpha()
    }

    /// Snapshot the current actor as the KL-penalty reference.
    pub fn refresh_kl_reference(&mut self) {
        self.kl_reference = Some(self.actor.clone());
    }

    /// One gradient trigger: critic step always, actor (and temperature) step
    /// at the configured delay.
    pub fn update(&mut self, batch: &[TransitionView], rng: &mut ChaCha8Rng) -> UpdateOutcome {
        let smoothing_sigma: Vec<f64>;
        let smoothing_clip: Vec<f64>;
        let target_policy = match (&self.actor, &self.actor_target) {
            (Policy::SquashedGaussian(actor), _) => {
                self.alpha_uses += 1;
                TargetPolicy::Stochastic {
                    actor,
                    alpha: self.temperature.alpha(),
                }
            }
            (Policy::Deterministic(_), Some(Policy::Deterministic(target))) => {
                smoothing_sigma = target
                    .action_scale
                    .iter()
                    .map(|s| s * self.cfg.smoothing_sigma_rel)
                    .collect();
                smoothing_clip = target
                    .action_scale
                    .iter()
                    .map(|s| s * self.cfg.smoothing_clip_rel)
                    .collect();
                TargetPolicy::Deterministic {
                    actor_target: target,
                    smoothing_sigma: &smoothing_sigma,
                    smoothing_clip: &smoothing_clip,
                }
            }
            _ => unreachable!("deterministic actor always carries a target"),
        };
        let targets =
            compute_critic_targets(batch, &self.critic_target, &target_policy, self.cfg.gamma, rng);
        let critic_loss =
            update_critics(&mut self.critic, &mut self.q1_opt, &mut self.q2_opt, batch, &targets);

        self.update_count += 1;
        let actor_loss = if self.update_count % self.cfg.actor_delay == 0 {
            let coeff = self.cfg.alpha_kl;
            Some(match &mut self.actor {
                Policy::SquashedGaussian(p) => {
                    self.alpha_uses += 1;
                    let alpha = self.temperature.alpha();
                    let kl_ref = match (&self.kl_reference, coeff > 0.0) {
                        (Some(Policy::SquashedGaussian(old)), true) => Some((old, coeff)),
                        _ => None,
                    };
                    let (loss, log_probs) =
                        update_actor_sac(p, &mut self.actor_opt, &self.critic, batch, alpha, kl_ref, rng);
                    if self.temperature.learnable {
                        self.temperature.update(&log_probs);
                    }
                    loss
                }
                Policy::Deterministic(p) => {
                    let kl_ref = match (&self.kl_reference, coeff > 0.0) {
                        (Some(Policy::Deterministic(old)), true) => Some((old, coeff)),
                        _ => None,
                    };
                    update_actor_td3(p, &mut self.actor_opt, &self.critic, batch, kl_ref)
                }
            })
        } else {
            None
        };
        UpdateOutcome {
            critic_loss,
            actor_loss,
        }
    }

    /// Polyak-averages every target toward its online network.
    pub fn update_targets(&mut self) {
        let tau = self.cfg.tau;
        polyak_update(&mut self.critic_target.q1, &self.critic.q1, tau);
        polyak_update(&mut self.critic_target.q2, &self.critic.q2, tau);
        if let (Some(Policy::Deterministic(target)), Policy::Deterministic(online)) =
            (&mut self.actor_target, &self.actor)
        {
            polyak_update(&mut target.net, &online.net, tau);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    struct OwnedTransition {
        state: Vec<f64>,
        goal: Vec<f64>,
        action: Vec<f64>,
        reward: f64,
        next_state: Vec<f64>,
        next_goal: Vec<f64>,
        done: bool,
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, done_every: usize) -> Vec<OwnedTransition> {
        (0..n)
            .map(|i| OwnedTransition {
                state: (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                goal: (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                action: (0..2).map(|_| rng.gen_range(-0.9..0.9)).collect(),
                reward: rng.gen_range(-5.0..0.0),
                next_state: (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                next_goal: (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                done: done_every != 0 && i % done_every == 0,
            })
            .collect()
    }

    fn views(batch: &[OwnedTransition]) -> Vec<TransitionView<'_>> {
        batch
            .iter()
            .map(|t| TransitionView {
                state: &t.state,
                goal: &t.goal,
                action: &t.action,
                reward: t.reward,
                next_state: &t.next_state,
                next_goal: &t.next_goal,
                done: t.done,
            })
            .collect()
    }

    fn stochastic_policy(seed: u64) -> SquashedGaussianPolicy {
        let net = MlpNetwork::init(&[4, 16, 4], OutputActivation::Identity, seed);
        SquashedGaussianPolicy::new(net, vec![1.0, 1.0]).unwrap()
    }

    fn deterministic_policy(seed: u64) -> DeterministicPolicy {
        let net = MlpNetwork::init(&[4, 16, 2], OutputActivation::Tanh, seed);
        DeterministicPolicy::new(net, vec![1.0, 1.0], vec![0.1, 0.1]).unwrap()
    }

    #[test]
    fn terminal_transitions_bootstrap_to_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = random_batch(&mut rng, 8, 1);
        let critic = TwinCritic::init(2, 2, 2, &[8], 2);
        let policy = stochastic_policy(3);
        let targets = compute_critic_targets(
            &views(&batch),
            &critic,
            &TargetPolicy::Stochastic { actor: &policy, alpha: 0.5 },
            0.99,
            &mut rng,
        );
        for (t, y) in batch.iter().zip(&targets) {
            assert_eq!(*y, t.reward);
        }
    }

    #[test]
    fn deterministic_targets_match_straight_line_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = random_batch(&mut rng, 16, 5);
        let critic = TwinCritic::init(2, 2, 2, &[8], 5);
        let actor_target = deterministic_policy(6);
        // Tiny smoothing so the clamp logic is exercised but the oracle can
        // replicate the noise draws with a cloned stream.
        let sigma = vec![0.2, 0.2];
        let clip = vec![0.5, 0.5];
        let mut rng_a = ChaCha8Rng::seed_from_u64(7);
        let mut rng_b = rng_a.clone();
        let targets = compute_critic_targets(
            &views(&batch),
            &critic,
            &TargetPolicy::Deterministic {
                actor_target: &actor_target,
                smoothing_sigma: &sigma,
                smoothing_clip: &clip,
            },
            0.99,
            &mut rng_a,
        );
        for (t, y) in batch.iter().zip(&targets) {
            if t.done {
                assert_eq!(*y, t.reward);
                continue;
            }
            let mut a = actor_target.action(&t.next_state, &t.next_goal);
            for i in 0..2 {
                let z: f64 = rng_b.sample(StandardNormal);
                a[i] = (a[i] + (sigma[i] * z).clamp(-clip[i], clip[i])).clamp(-1.0, 1.0);
            }
            let q1 = critic.q1_value(&t.next_state, &t.next_goal, &a);
            let q2 = critic.q2_value(&t.next_state, &t.next_goal, &a);
            let want = t.reward + 0.99 * q1.min(q2);
            assert!((y - want).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_term_shifts_targets_by_exact_amount() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch = random_batch(&mut rng, 16, 0);
        let critic = TwinCritic::init(2, 2, 2, &[8], 9);
        // Sharply concentrated policy so sampled log-densities are positive
        // and a larger temperature strictly lowers every target.
        let mut net = MlpNetwork::zeros(&[4, 4], OutputActivation::Identity);
        net.layer_biases_mut(0)[2] = -3.0;
        net.layer_biases_mut(0)[3] = -3.0;
        let policy = SquashedGaussianPolicy::new(net, vec![1.0, 1.0]).unwrap();

        let alpha = 0.3;
        let mut rng_a = ChaCha8Rng::seed_from_u64(10);
        let mut rng_b = rng_a.clone();
        let mut rng_c = rng_a.clone();
        let v = views(&batch);
        let y1 = compute_critic_targets(
            &v,
            &critic,
            &TargetPolicy::Stochastic { actor: &policy, alpha },
            0.99,
            &mut rng_a,
        );
        let y2 = compute_critic_targets(
            &v,
            &critic,
            &TargetPolicy::Stochastic { actor: &policy, alpha: 2.0 * alpha },
            0.99,
            &mut rng_b,
        );
        for ((t, a), b) in batch.iter().zip(&y1).zip(&y2) {
            // Same noise stream, so the difference is exactly the extra
            // entropy term.
            let (_, lp) = policy.sample(&t.next_state, &t.next_goal, &mut rng_c);
            let want = -0.99 * alpha * lp;
            assert!(((b - a) - want).abs() < 1e-12);
            assert!(b < a, "larger temperature must lower the target here");
        }
    }

    #[test]
    fn critic_update_with_matching_targets_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch = random_batch(&mut rng, 8, 0);
        let mut critic = TwinCritic::init(2, 2, 2, &[8], 12);
        let before = critic.clone();
        let v = views(&batch);
        // Targets equal to each head's own prediction would need per-head
        // targets; use a critic whose heads are identical instead.
        critic.q2 = critic.q1.clone();
        let targets: Vec<f64> = v
            .iter()
            .map(|t| critic.q1_value(t.state, t.goal, t.action))
            .collect();
        let mut o1 = AdamState::new(&critic.q1, 1e-3);
        let mut o2 = AdamState::new(&critic.q2, 1e-3);
        let loss = update_critics(&mut critic, &mut o1, &mut o2, &v, &targets);
        assert_eq!(loss, 0.0);
        assert_eq!(critic.q1, before.q1.clone());
    }

    #[test]
    fn critic_overfits_a_fixed_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let batch = random_batch(&mut rng, 16, 0);
        let v = views(&batch);
        let targets: Vec<f64> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut critic = TwinCritic::init(2, 2, 2, &[32], 14);
        let mut o1 = AdamState::new(&critic.q1, 1e-2);
        let mut o2 = AdamState::new(&critic.q2, 1e-2);
        let first = update_critics(&mut critic, &mut o1, &mut o2, &v, &targets);
        let mut last = first;
        for _ in 0..99 {
            last = update_critics(&mut critic, &mut o1, &mut o2, &v, &targets);
        }
        assert!(last < 0.1 * first, "loss {first} -> {last} did not shrink");
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let batch = random_batch(&mut rng, 4, 0);
        let v = views(&batch);
        let targets: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let critic = TwinCritic::init(2, 2, 2, &[6], 16);

        let loss_of = |q1: &MlpNetwork| -> f64 {
            let mut loss = 0.0;
            for (t, &y) in v.iter().zip(&targets) {
                let input = TwinCritic::input(t.state, t.goal, t.action);
                let e = q1.forward(&input)[0] - y;
                loss += e * e / v.len() as f64;
            }
            loss
        };

        // Analytic gradient of the q1 half of the loss.
        let mut grads = Gradients::zeros_like(&critic.q1);
        for (t, &y) in v.iter().zip(&targets) {
            let input = TwinCritic::input(t.state, t.goal, t.action);
            critic
                .q1
                .backward_map(&input, |out| vec![2.0 * (out[0] - y)], &mut grads, 1.0 / v.len() as f64);
        }
        let h = 1e-6;
        for l in 0..critic.q1.num_weight_layers() {
            for i in (0..critic.q1.layer_weights(l).len()).step_by(5) {
                let mut plus = critic.q1.clone();
                plus.layer_weights_mut(l)[i] += h;
                let mut minus = critic.q1.clone();
                minus.layer_weights_mut(l)[i] -= h;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let analytic = grads.weights[l][i];
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    ((analytic - numeric) / denom).abs() < 1e-4,
                    "layer {l} w{i}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn sac_actor_zero_critic_zero_alpha_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let batch = random_batch(&mut rng, 8, 0);
        let v = views(&batch);
        let critic = TwinCritic::new(
            MlpNetwork::zeros(&[6, 4, 1], OutputActivation::Identity),
            MlpNetwork::zeros(&[6, 4, 1], OutputActivation::Identity),
        )
        .unwrap();
        let mut policy = stochastic_policy(18);
        let before = policy.clone();
        let mut opt = AdamState::new(&policy.net, 1e-3);
        let (loss, _) = update_actor_sac(&mut policy, &mut opt, &critic, &v, 0.0, None, &mut rng);
        assert_eq!(loss, 0.0);
        assert_eq!(policy, before);
    }

    #[test]
    fn sac_actor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let batch = random_batch(&mut rng, 3, 0);
        let v = views(&batch);
        let critic = TwinCritic::init(2, 2, 2, &[8], 20);
        let policy = stochastic_policy(21);
        let alpha = 0.2;

        // Fixed noise per sample makes the loss a deterministic function of
        // the parameters.
        let noises: Vec<Vec<f64>> = (0..3).map(|_| policy.draw_noise(&mut rng)).collect();
        let loss_of = |p: &SquashedGaussianPolicy| -> f64 {
            let mut loss = 0.0;
            for (t, noise) in v.iter().zip(&noises) {
                let path = p.sample_path(t.state, t.goal, noise);
                let q = critic.min_q(t.state, t.goal, &path.action);
                loss += (alpha * path.log_prob - q) / v.len() as f64;
            }
            loss
        };

        let mut grads = Gradients::zeros_like(&policy.net);
        for (t, noise) in v.iter().zip(&noises) {
            let path = policy.sample_path(t.state, t.goal, noise);
            let input = TwinCritic::input(t.state, t.goal, &path.action);
            let q1 = critic.q1.forward(&input)[0];
            let q2 = critic.q2.forward(&input)[0];
            let head = if q1 <= q2 { &critic.q1 } else { &critic.q2 };
            let mut sink = Gradients::zeros_like(head);
            let (_, d_input) = head.backward_map(&input, |_| vec![1.0], &mut sink, 0.0);
            let d_action: Vec<f64> = d_input[4..].iter().map(|g| -g).collect();
            let head_grad = path.head_gradient(&d_action, alpha, &policy.action_scale);
            policy
                .net
                .backward_accumulate(&[t.state, t.goal].concat(), &head_grad, &mut grads, 1.0 / 3.0);
        }

        let h = 1e-6;
        for l in 0..policy.net.num_weight_layers() {
            for i in (0..policy.net.layer_weights(l).len()).step_by(3) {
                let mut plus = policy.clone();
                plus.net.layer_weights_mut(l)[i] += h;
                let mut minus = policy.clone();
                minus.net.layer_weights_mut(l)[i] -= h;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let analytic = grads.weights[l][i];
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    ((analytic - numeric) / denom).abs() < 2e-4,
                    "layer {l} w{i}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn large_alpha_update_raises_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let batch = random_batch(&mut rng, 32, 0);
        let v = views(&batch);
        let critic = TwinCritic::init(2, 2, 2, &[8], 23);
        let mut policy = stochastic_policy(24);

        let entropy_on_batch = |p: &SquashedGaussianPolicy, seed: u64| -> f64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut acc = 0.0;
            let m = 200;
            for t in &v {
                for _ in 0..m {
                    let (_, lp) = p.sample(t.state, t.goal, &mut rng);
                    acc -= lp;
                }
            }
            acc / (v.len() * m) as f64
        };

        let before = entropy_on_batch(&policy, 900);
        let mut opt = AdamState::new(&policy.net, 1e-2);
        for _ in 0..50 {
            update_actor_sac(&mut policy, &mut opt, &critic, &v, 50.0, None, &mut rng);
        }
        let after = entropy_on_batch(&policy, 900);
        assert!(after > before, "entropy {before} -> {after} did not rise");
    }

    #[test]
    fn td3_actor_constant_critic_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let batch = random_batch(&mut rng, 8, 0);
        let v = views(&batch);
        // Bias-only critic: constant in the action.
        let mut q = MlpNetwork::zeros(&[6, 1], OutputActivation::Identity);
        q.layer_biases_mut(0)[0] = 2.5;
        let critic = TwinCritic::new(q.clone(), q).unwrap();
        let mut policy = deterministic_policy(26);
        let before = policy.clone();
        let mut opt = AdamState::new(&policy.net, 1e-3);
        let loss = update_actor_td3(&mut policy, &mut opt, &critic, &v, None);
        assert!((loss + 2.5).abs() < 1e-12);
        assert_eq!(policy, before);
    }

    #[test]
    fn td3_actor_climbs_a_constructed_bowl() {
        // Critic encodes -|a - a*|_1 exactly with ReLU pairs, so repeated
        // policy steps must drive mu toward a* = (0.3, -0.2).
        let a_star = [0.3, -0.2];
        let mut q = MlpNetwork::zeros(&[6, 4, 1], OutputActivation::Identity);
        for (j, &target) in a_star.iter().enumerate() {
            let a_col = 4 + j;
            let w = q.layer_weights_mut(0);
            w[(2 * j) * 6 + a_col] = 1.0;
            w[(2 * j + 1) * 6 + a_col] = -1.0;
            let b = q.layer_biases_mut(0);
            b[2 * j] = -target;
            b[2 * j + 1] = target;
        }
        for i in 0..4 {
            q.layer_weights_mut(1)[i] = -1.0;
        }
        let critic = TwinCritic::new(q.clone(), q).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let batch = random_batch(&mut rng, 8, 0);
        let v = views(&batch);
        let mut policy = deterministic_policy(28);
        let mut opt = AdamState::new(&policy.net, 1e-2);
        for _ in 0..500 {
            update_actor_td3(&mut policy, &mut opt, &critic, &v, None);
        }
        for t in &v {
            let a = policy.action(t.state, t.goal);
            assert!(
                (a[0] - a_star[0]).abs() < 0.05 && (a[1] - a_star[1]).abs() < 0.05,
                "action {a:?} did not reach {a_star:?}"
            );
        }
    }

    #[test]
    fn td3_actor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let batch = random_batch(&mut rng, 4, 0);
        let v = views(&batch);
        let critic = TwinCritic::init(2, 2, 2, &[8], 30);
        let policy = deterministic_policy(31);

        let loss_of = |p: &DeterministicPolicy| -> f64 {
            -v.iter()
                .map(|t| critic.q1_value(t.state, t.goal, &p.action(t.state, t.goal)))
                .sum::<f64>()
                / v.len() as f64
        };

        let mut grads = Gradients::zeros_like(&policy.net);
        for t in &v {
            let action = policy.action(t.state, t.goal);
            let input = TwinCritic::input(t.state, t.goal, &action);
            let mut sink = Gradients::zeros_like(&critic.q1);
            let (_, d_input) = critic.q1.backward_map(&input, |_| vec![1.0], &mut sink, 0.0);
            let head_grad: Vec<f64> = (0..2).map(|i| -d_input[4 + i] * policy.action_scale[i]).collect();
            policy
                .net
                .backward_accumulate(&[t.state, t.goal].concat(), &head_grad, &mut grads, 0.25);
        }

        let h = 1e-6;
        for l in 0..policy.net.num_weight_layers() {
            for i in (0..policy.net.layer_weights(l).len()).step_by(3) {
                let mut plus = policy.clone();
                plus.net.layer_weights_mut(l)[i] += h;
                let mut minus = policy.clone();
                minus.net.layer_weights_mut(l)[i] -= h;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let analytic = grads.weights[l][i];
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    ((analytic - numeric) / denom).abs() < 1e-4,
                    "layer {l} w{i}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn temperature_step_sign_tracks_entropy_gap() {
        let mut temp = Temperature::new(0.5, true, -2.0, 3e-4).unwrap();

        // Batch entropy equals the target: no movement.
        let la = temp.log_alpha;
        temp.update(&[2.0, 2.0, 2.0]);
        assert_eq!(temp.log_alpha, la);

        // Entropy above target (log probs very negative): alpha shrinks.
        temp.update(&[-10.0, -10.0]);
        assert!(temp.log_alpha < la);

        // Entropy below target: alpha grows.
        let mut temp2 = Temperature::new(0.5, true, -2.0, 3e-4).unwrap();
        temp2.update(&[5.0, 5.0]);
        assert!(temp2.log_alpha > 0.5f64.ln());
    }

    #[test]
    #[should_panic(expected = "constant temperature")]
    fn constant_temperature_rejects_updates() {
        let mut temp = Temperature::new(0.5, false, -2.0, 3e-4).unwrap();
        temp.update(&[0.0]);
    }

    #[test]
    fn kl_penalty_zero_coefficient_is_identity() {
        let old = Policy::Deterministic(deterministic_policy(32));
        let new = Policy::Deterministic(deterministic_policy(33));
        let states = vec![vec![0.1, 0.2], vec![-0.4, 0.5]];
        let goals = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let loss = kl_penalized_actor_loss(1.25, &old, &new, &states, &goals, 0.0);
        assert_eq!(loss, 1.25);
    }

    #[test]
    fn kl_penalty_vanishes_for_identical_policies() {
        let p = Policy::SquashedGaussian(stochastic_policy(34));
        let states = vec![vec![0.1, 0.2]];
        let goals = vec![vec![1.0, 0.0]];
        let loss = kl_penalized_actor_loss(2.0, &p, &p.clone(), &states, &goals, 0.7);
        assert!((loss - 2.0).abs() < 1e-15);
    }

    #[test]
    fn level_agent_update_cadence_and_target_lag() {
        let cfg = AgentLevelConfig {
            policy_kind: PolicyKindConfig::Deterministic,
            hidden: vec![8, 8],
            ..AgentLevelConfig::low_defaults()
        };
        let mut agent = LevelAgent::new(cfg, 2, 2, vec![1.0, 1.0], 77).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let batch = random_batch(&mut rng, 8, 0);
        let v = views(&batch);

        // Replay the Polyak recursion offline from recorded online snapshots.
        let mut offline_target = agent.critic_target.q1.clone();
        for step in 1..=10u64 {
            let outcome = agent.update(&v, &mut rng);
            assert_eq!(outcome.actor_loss.is_some(), step % 2 == 0, "delay at {step}");
            agent.update_targets();
            polyak_update(&mut offline_target, &agent.critic.q1, agent.cfg.tau);
        }
        for l in 0..offline_target.num_weight_layers() {
            for (a, b) in offline_target
                .layer_weights(l)
                .iter()
                .zip(agent.critic_target.q1.layer_weights(l))
            {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // Deterministic level never touches its temperature.
        assert_eq!(agent.alpha_uses, 0);
    }

    #[test]
    fn deterministic_update_matches_reference_td3_step() {
        // Straight-line TD3 step sharing only the nn primitives, compared
        // bit-for-bit with the LevelAgent sequencing.
        let cfg = AgentLevelConfig {
            policy_kind: PolicyKindConfig::Deterministic,
            hidden: vec![8],
            actor_delay: 1,
            ..AgentLevelConfig::low_defaults()
        };
        let mut agent = LevelAgent::new(cfg.clone(), 2, 2, vec![1.0, 1.0], 90).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let batch = random_batch(&mut rng, 6, 3);
        let v = views(&batch);

        // Reference copies.
        let mut ref_critic = agent.critic.clone();
        let ref_target = agent.critic_target.clone();
        let (ref_actor, ref_actor_target) = match (&agent.actor, &agent.actor_target) {
            (Policy::Deterministic(a), Some(Policy::Deterministic(t))) => (a.clone(), t.clone()),
            _ => unreachable!(),
        };
        let mut ref_actor = ref_actor;
        let mut ro1 = agent.q1_opt.clone();
        let mut ro2 = agent.q2_opt.clone();
        let mut roa = agent.actor_opt.clone();

        let mut rng_impl = ChaCha8Rng::seed_from_u64(92);
        let mut rng_ref = rng_impl.clone();
        agent.update(&v, &mut rng_impl);

        // Reference: targets.
        let sigma = [0.2, 0.2];
        let clip = [0.5, 0.5];
        let targets: Vec<f64> = v
            .iter()
            .map(|t| {
                if t.done {
                    return t.reward;
                }
                let mut a = ref_actor_target.action(t.next_state, t.next_goal);
                for i in 0..2 {
                    let z: f64 = rng_ref.sample(StandardNormal);
                    a[i] = (a[i] + (sigma[i] * z).clamp(-clip[i], clip[i])).clamp(-1.0, 1.0);
                }
                t.reward + cfg.gamma * ref_target.min_q(t.next_state, t.next_goal, &a)
            })
            .collect();
        // Reference: critic step.
        let n = v.len() as f64;
        let mut g1 = Gradients::zeros_like(&ref_critic.q1);
        let mut g2 = Gradients::zeros_like(&ref_critic.q2);
        for (t, &y) in v.iter().zip(&targets) {
            let input = TwinCritic::input(t.state, t.goal, t.action);
            let p1 = ref_critic.q1.forward(&input)[0];
            let p2 = ref_critic.q2.forward(&input)[0];
            ref_critic.q1.backward_accumulate(&input, &[2.0 * (p1 - y)], &mut g1, 1.0 / n);
            ref_critic.q2.backward_accumulate(&input, &[2.0 * (p2 - y)], &mut g2, 1.0 / n);
        }
        adam_step(&mut ref_critic.q1, &g1, &mut ro1);
        adam_step(&mut ref_critic.q2, &g2, &mut ro2);
        // Reference: actor step against the updated critic.
        let mut ga = Gradients::zeros_like(&ref_actor.net);
        for t in &v {
            let a = ref_actor.action(t.state, t.goal);
            let input = TwinCritic::input(t.state, t.goal, &a);
            let (_, d_input) = ref_critic.q1.backward(&input, &[1.0]);
            let head: Vec<f64> = (0..2).map(|i| -d_input[4 + i]).collect();
            ref_actor.net.backward_accumulate(&[t.state, t.goal].concat(), &head, &mut ga, 1.0 / n);
        }
        adam_step(&mut ref_actor.net, &ga, &mut roa);

        assert_eq!(agent.critic.q1, ref_critic.q1);
        assert_eq!(agent.critic.q2, ref_critic.q2);
        match &agent.actor {
            Policy::Deterministic(p) => assert_eq!(p.net, ref_actor.net),
            _ => unreachable!(),
        }
    }
}
