//! Policy families and the twin critic.
//!
//! Two kinds of goal-conditioned policy cover both hierarchy levels:
//!
//! - [`DeterministicPolicy`]: a tanh-headed network scaled to the action box,
//!   with diagonal Gaussian exploration noise added in action space and
//!   clipped back to the box.
//! - [`SquashedGaussianPolicy`]: a network emitting (mean, log-std) of a
//!   diagonal Gaussian that is squashed through tanh and scaled; sampling is
//!   reparameterized so actor updates can push gradients through it.
//!
//! Policies are immutable during action selection and take caller-supplied
//! random streams; nothing here owns hidden state.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::{MlpNetwork, OutputActivation};
use crate::{Error, Result};

/// Clamp bounds for the stochastic policy's log standard deviation head.
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable `ln(1 - tanh(u)^2)`.
#[inline]
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

#[inline]
fn concat(s: &[f64], g: &[f64]) -> Vec<f64> {
    let mut input = Vec::with_capacity(s.len() + g.len());
    input.extend_from_slice(s);
    input.extend_from_slice(g);
    input
}

/// Deterministic policy: `action = scale .* tanh_head(s, g)`, with
/// diagonal Gaussian exploration noise in action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    pub net: MlpNetwork,
    pub action_scale: Vec<f64>,
    pub exploration_sigma: Vec<f64>,
}

impl DeterministicPolicy {
    pub fn new(net: MlpNetwork, action_scale: Vec<f64>, exploration_sigma: Vec<f64>) -> Result<Self> {
        if net.output_dim() != action_scale.len() {
            return Err(Error::InvalidConfig(format!(
                "network output dim {} but {} action scales",
                net.output_dim(),
                action_scale.len()
            )));
        }
        if exploration_sigma.len() != action_scale.len() {
            return Err(Error::InvalidConfig(
                "exploration sigma length must match action dimension".into(),
            ));
        }
        if action_scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidConfig("action scales must be positive".into()));
        }
        if exploration_sigma.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidConfig("exploration sigma must be positive".into()));
        }
        Ok(Self {
            net,
            action_scale,
            exploration_sigma,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_scale.len()
    }

    /// Mean action, always inside the closed action box.
    pub fn action(&self, s: &[f64], g: &[f64]) -> Vec<f64> {
        let head = self.net.forward(&concat(s, g));
        head.iter()
            .zip(&self.action_scale)
            .map(|(y, scale)| y * scale)
            .collect()
    }

    /// Mean action plus Gaussian noise, clipped to the action box.
    pub fn explore_action<R: Rng + ?Sized>(&self, s: &[f64], g: &[f64], rng: &mut R) -> Vec<f64> {
        let mut action = self.action(s, g);
        for ((a, sigma), scale) in action
            .iter_mut()
            .zip(&self.exploration_sigma)
            .zip(&self.action_scale)
        {
            let z: f64 = rng.sample(StandardNormal);
            *a = (*a + sigma * z).clamp(-scale, *scale);
        }
        action
    }
}

/// Everything needed to re-run the chain rule through one reparameterized
/// sample: `action = scale .* tanh(mu + sigma .* noise)`.
#[derive(Debug, Clone)]
pub struct SamplePath {
    pub action: Vec<f64>,
    pub log_prob: f64,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    tanh_u: Vec<f64>,
    noise: Vec<f64>,
    /// Per-dimension flag: raw log-std inside the clamp interval, so
    /// gradient flows to the log-std head.
    std_grad_open: Vec<bool>,
}

impl SamplePath {
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Whether the raw log-std of dimension `i` sat strictly inside the clamp
    /// interval, i.e. gradient flows to the log-std head.
    pub fn std_grad_open(&self, i: usize) -> bool {
        self.std_grad_open[i]
    }

    /// Maps a loss gradient on `(action, log_prob)` back to a gradient on the
    /// raw network output `[mu..., log_std_raw...]`, ready for
    /// `MlpNetwork::backward`.
    pub fn head_gradient(&self, d_action: &[f64], d_log_prob: f64, scale: &[f64]) -> Vec<f64> {
        let k = self.mu.len();
        assert_eq!(d_action.len(), k, "action gradient length mismatch");
        let mut head = vec![0.0; 2 * k];
        for i in 0..k {
            let t = self.tanh_u[i];
            let da_du = scale[i] * (1.0 - t * t);
            let dlp_du = 2.0 * t;
            // u = mu + sigma * z with z fixed.
            let d_mu = d_log_prob * dlp_du + d_action[i] * da_du;
            let d_sigma =
                d_log_prob * (-1.0 / self.sigma[i] + dlp_du * self.noise[i]) + d_action[i] * da_du * self.noise[i];
            head[i] = d_mu;
            head[k + i] = if self.std_grad_open[i] {
                d_sigma * self.sigma[i]
            } else {
                0.0
            };
        }
        head
    }
}

/// Stochastic policy: diagonal Gaussian squashed through tanh and scaled to
/// the action box. The network's identity head has width `2 * action_dim`
/// (mean then log-std).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquashedGaussianPolicy {
    pub net: MlpNetwork,
    pub action_scale: Vec<f64>,
}

impl SquashedGaussianPolicy {
    pub fn new(net: MlpNetwork, action_scale: Vec<f64>) -> Result<Self> {
        if net.output_dim() != 2 * action_scale.len() {
            return Err(Error::InvalidConfig(format!(
                "network output dim {} but stochastic policy needs {}",
                net.output_dim(),
                2 * action_scale.len()
            )));
        }
        if action_scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidConfig("action scales must be positive".into()));
        }
        Ok(Self { net, action_scale })
    }

    pub fn action_dim(&self) -> usize {
        self.action_scale.len()
    }

    /// Pre-squash Gaussian parameters `(mu, sigma)` at `(s, g)`, log-std
    /// clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn gaussian_params(&self, s: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let head = self.net.forward(&concat(s, g));
        let k = self.action_dim();
        let mu = head[..k].to_vec();
        let sigma = head[k..]
            .iter()
            .map(|ls| ls.clamp(LOG_STD_MIN, LOG_STD_MAX).exp())
            .collect();
        (mu, sigma)
    }

    /// Distribution mode: `scale .* tanh(mu)`, used for noise-free evaluation.
    pub fn mean_action(&self, s: &[f64], g: &[f64]) -> Vec<f64> {
        let (mu, _) = self.gaussian_params(s, g);
        mu.iter()
            .zip(&self.action_scale)
            .map(|(m, scale)| scale * m.tanh())
            .collect()
    }

    /// Reparameterized sample with its log-density.
    pub fn sample<R: Rng + ?Sized>(&self, s: &[f64], g: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
        let path = self.sample_path(s, g, &self.draw_noise(rng));
        (path.action, path.log_prob)
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.action_dim()).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Deterministic transform of `(s, g, noise)` into an action, keeping the
    /// intermediate values an actor update needs for the chain rule.
    pub fn sample_path(&self, s: &[f64], g: &[f64], noise: &[f64]) -> SamplePath {
        let head = self.net.forward(&concat(s, g));
        let k = self.action_dim();
        assert_eq!(noise.len(), k, "noise length mismatch");
        let mu = head[..k].to_vec();
        let mut sigma = vec![0.0; k];
        let mut std_grad_open = vec![false; k];
        for i in 0..k {
            let raw = head[k + i];
            std_grad_open[i] = raw > LOG_STD_MIN && raw < LOG_STD_MAX;
            sigma[i] = raw.clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
        }
        let mut action = vec![0.0; k];
        let mut tanh_u = vec![0.0; k];
        let mut log_prob = 0.0;
        for i in 0..k {
            let u = mu[i] + sigma[i] * noise[i];
            // Guard the open-box invariant against tanh rounding to +-1.
            let t = u.tanh().clamp(-(1.0 - 1e-15), 1.0 - 1e-15);
            tanh_u[i] = t;
            action[i] = self.action_scale[i] * t;
            log_prob += -0.5 * noise[i] * noise[i] - sigma[i].ln() - HALF_LN_TWO_PI;
            log_prob -= self.action_scale[i].ln() + log_one_minus_tanh_sq(u);
        }
        SamplePath {
            action,
            log_prob,
            mu,
            sigma,
            tanh_u,
            noise: noise.to_vec(),
            std_grad_open,
        }
    }

    /// Log-density of `action`, which must lie strictly inside the open box.
    pub fn log_prob(&self, s: &[f64], g: &[f64], action: &[f64]) -> Result<f64> {
        let k = self.action_dim();
        assert_eq!(action.len(), k, "action length mismatch");
        let (mu, sigma) = self.gaussian_params(s, g);
        let mut log_prob = 0.0;
        for i in 0..k {
            let y = action[i] / self.action_scale[i];
            if y <= -1.0 || y >= 1.0 || !y.is_finite() {
                return Err(Error::Domain(format!(
                    "action component {i} = {} is outside the open box (+-{})",
                    action[i], self.action_scale[i]
                )));
            }
            let u = y.atanh();
            let z = (u - mu[i]) / sigma[i];
            log_prob += -0.5 * z * z - sigma[i].ln() - HALF_LN_TWO_PI;
            log_prob -= self.action_scale[i].ln() + log_one_minus_tanh_sq(u);
        }
        Ok(log_prob)
    }
}

/// Either policy family, as deployed at one hierarchy level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    Deterministic(DeterministicPolicy),
    SquashedGaussian(SquashedGaussianPolicy),
}

impl Policy {
    pub fn action_dim(&self) -> usize {
        match self {
            Policy::Deterministic(p) => p.action_dim(),
            Policy::SquashedGaussian(p) => p.action_dim(),
        }
    }

    pub fn action_scale(&self) -> &[f64] {
        match self {
            Policy::Deterministic(p) => &p.action_scale,
            Policy::SquashedGaussian(p) => &p.action_scale,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Policy::SquashedGaussian(_))
    }

    /// Exploratory action: noisy mean for the deterministic family, a fresh
    /// sample for the stochastic one.
    pub fn explore_action<R: Rng + ?Sized>(&self, s: &[f64], g: &[f64], rng: &mut R) -> Vec<f64> {
        match self {
            Policy::Deterministic(p) => p.explore_action(s, g, rng),
            Policy::SquashedGaussian(p) => p.sample(s, g, rng).0,
        }
    }

    /// Noise-free action for evaluation.
    pub fn eval_action(&self, s: &[f64], g: &[f64]) -> Vec<f64> {
        match self {
            Policy::Deterministic(p) => p.action(s, g),
            Policy::SquashedGaussian(p) => p.mean_action(s, g),
        }
    }

    /// The Gaussian this policy represents at `(s, g)`: an action-space
    /// `N(mu, diag(sigma^2))` for the deterministic family (its exploration
    /// noise), the pre-squash Gaussian for the stochastic one.
    pub fn policy_gaussian(&self, s: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self {
            Policy::Deterministic(p) => (p.action(s, g), p.exploration_sigma.clone()),
            Policy::SquashedGaussian(p) => p.gaussian_params(s, g),
        }
    }
}

/// Two independent Q heads over `(state, goal, action)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinCritic {
    pub q1: MlpNetwork,
    pub q2: MlpNetwork,
}

impl TwinCritic {
    pub fn new(q1: MlpNetwork, q2: MlpNetwork) -> Result<Self> {
        if q1.input_dim() != q2.input_dim() {
            return Err(Error::InvalidConfig(
                "twin critic heads must share input dimensionality".into(),
            ));
        }
        if q1.output_dim() != 1 || q2.output_dim() != 1 {
            return Err(Error::InvalidConfig("critic heads must be scalar".into()));
        }
        Ok(Self { q1, q2 })
    }

    pub fn init(
        state_dim: usize,
        goal_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        seed: u64,
    ) -> Self {
        let mut sizes = vec![state_dim + goal_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            q1: MlpNetwork::init(&sizes, OutputActivation::Identity, seed),
            q2: MlpNetwork::init(&sizes, OutputActivation::Identity, seed.wrapping_add(1)),
        }
    }

    pub fn input(s: &[f64], g: &[f64], a: &[f64]) -> Vec<f64> {
        let mut input = Vec::with_capacity(s.len() + g.len() + a.len());
        input.extend_from_slice(s);
        input.extend_from_slice(g);
        input.extend_from_slice(a);
        input
    }

    pub fn q1_value(&self, s: &[f64], g: &[f64], a: &[f64]) -> f64 {
        self.q1.forward(&Self::input(s, g, a))[0]
    }

    pub fn q2_value(&self, s: &[f64], g: &[f64], a: &[f64]) -> f64 {
        self.q2.forward(&Self::input(s, g, a))[0]
    }

    /// Clipped double-Q value: the pointwise minimum of the two heads.
    pub fn min_q(&self, s: &[f64], g: &[f64], a: &[f64]) -> f64 {
        self.q1_value(s, g, a).min(self.q2_value(s, g, a))
    }
}
