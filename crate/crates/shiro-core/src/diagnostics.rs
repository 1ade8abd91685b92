//! Quantitative instrumentation for policy drift.
//!
//! The central quantity is the KL divergence between two snapshots of a
//! policy, evaluated in closed form over a batch of probe inputs. Pinsker's
//! inequality turns the worst-case KL into a per-state total-variation budget
//! `eps = sqrt(max_kl / 2)`, and the drift of the c-step abstracted
//! transition distribution is then bounded by `2 * eps * c`. The
//! [`theorem1_check`] routine measures that drift empirically by rolling both
//! snapshots out of the same start and histogramming final states.
//!
//! The measured `eps` is a maximum over *visited* states, not a supremum over
//! all states, so the check is a statistical test rather than a proof; the
//! report says so in its `note` field.

use std::collections::HashMap;
use std::io::{BufRead, Write};


use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::UmdpEnv;
use crate::hrl::goal_transition;
use crate::policies::Policy;
use crate::{Error, Result};

/// One KL measurement over a probe batch, with its Pinsker conversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlRecord {
    pub env_step: u64,
    pub mean_kl: f64,
    pub max_kl: f64,
    pub pinsker_epsilon: f64,
    pub bound_2ec: f64,
}

impl KlRecord {
    pub fn new(env_step: u64, mean_kl: f64, max_kl: f64, c: usize) -> Result<Self> {
        if mean_kl > max_kl {
            return Err(Error::Domain(format!("mean KL {mean_kl} exceeds max {max_kl}")));
        }
        let eps = pinsker_epsilon(max_kl)?;
        Ok(Self {
            env_step,
            mean_kl,
            max_kl,
            pinsker_epsilon: eps,
            bound_2ec: 2.0 * eps * c as f64,
        })
    }
}

/// Writes `step,mean_kl,max_kl,epsilon,bound` rows.
pub fn write_kl_csv<W: Write>(records: &[KlRecord], out: &mut W) -> Result<()> {
    writeln!(out, "step,mean_kl,max_kl,epsilon,bound")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.env_step, r.mean_kl, r.max_kl, r.pinsker_epsilon, r.bound_2ec
        )?;
    }
    Ok(())
}

/// Terminal position of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalPosition {
    pub episode: u64,
    pub x: f64,
    pub y: f64,
    pub success: bool,
}

/// Append-only record of where episodes ended.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalPositionLog {
    entries: Vec<FinalPosition>,
}

impl FinalPositionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, terminal_state: &[f64], success: bool) {
        assert!(terminal_state.len() >= 2, "terminal state needs x and y");
        self.entries.push(FinalPosition {
            episode: self.entries.len() as u64,
            x: terminal_state[0],
            y: terminal_state[1],
            success,
        });
    }

    pub fn entries(&self) -> &[FinalPosition] {
        &self.entries
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "episode,x,y,success")?;
        for e in &self.entries {
            writeln!(out, "{},{},{},{}", e.episode, e.x, e.y, e.success)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(header)) if header.trim() == "episode,x,y,success" => {}
            _ => return Err(Error::Corrupt("missing final-position CSV header".into())),
        }
        let mut log = Self::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Corrupt(format!("bad final-position row: {line}")));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Corrupt(format!("bad number {s}")))
            };
            log.entries.push(FinalPosition {
                episode: fields[0]
                    .parse()
                    .map_err(|_| Error::Corrupt(format!("bad episode {}", fields[0])))?,
                x: parse(fields[1])?,
                y: parse(fields[2])?,
                success: fields[3]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Corrupt(format!("bad flag {}", fields[3])))?,
            });
        }
        Ok(log)
    }
}

/// Diagonal-Gaussian `KL(p || q)`.
fn kl_diag(mu_p: &[f64], sigma_p: &[f64], mu_q: &[f64], sigma_q: &[f64]) -> f64 {
    assert_eq!(mu_p.len(), mu_q.len(), "mean dimension mismatch");
    let mut kl = 0.0;
    for i in 0..mu_p.len() {
        let vp = sigma_p[i] * sigma_p[i];
        let vq = sigma_q[i] * sigma_q[i];
        let dm = mu_p[i] - mu_q[i];
        kl += (sigma_q[i] / sigma_p[i]).ln() + (vp + dm * dm) / (2.0 * vq) - 0.5;
    }
    kl
}

/// Closed-form `KL(old(.|s,g) || new(.|s,g))` aggregated over probe inputs.
///
/// Both snapshots must be the same policy family: the deterministic family
/// compares exploration Gaussians in action space, the stochastic family
/// compares pre-squash Gaussians (the shared invertible squash leaves KL
/// unchanged, so this equals the post-squash KL).
pub fn policy_kl_gaussian(
    old: &Policy,
    new: &Policy,
    probe: &[(Vec<f64>, Vec<f64>)],
) -> (f64, f64) {
    assert!(!probe.is_empty(), "empty probe batch");
    assert_eq!(
        old.is_stochastic(),
        new.is_stochastic(),
        "KL requires snapshots of the same policy family"
    );
    assert_eq!(old.action_dim(), new.action_dim(), "action dimension mismatch");
    let mut mean = 0.0;
    let mut max = 0.0f64;
    for (s, g) in probe {
        let (mu_p, sigma_p) = old.policy_gaussian(s, g);
        let (mu_q, sigma_q) = new.policy_gaussian(s, g);
        let kl = kl_diag(&mu_p, &sigma_p, &mu_q, &sigma_q);
        mean += kl;
        max = max.max(kl);
    }
    (mean / probe.len() as f64, max)
}

/// Pinsker's inequality: a per-state total-variation budget from the
/// worst-case KL.
pub fn pinsker_epsilon(max_kl: f64) -> Result<f64> {
    if max_kl < 0.0 {
        return Err(Error::Domain(format!("negative KL {max_kl}")));
    }
    Ok((max_kl / 2.0).sqrt())
}

/// Anything that can drive a rollout; lets tests substitute constructed
/// mistake-rate policies for real ones.
pub trait RolloutActor {
    fn act(&self, s: &[f64], g: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64>;
}

impl RolloutActor for Policy {
    fn act(&self, s: &[f64], g: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.explore_action(s, g, rng)
    }
}

fn grid_key(state: &[f64], cell: f64) -> Vec<i64> {
    state.iter().map(|&x| (x / cell).floor() as i64).collect()
}

/// Rolls `actor` for `c` steps from `(start, subgoal)`, advancing the
/// sub-goal with the goal transition model, and returns the final state.
/// `visit` sees every `(state, goal)` pair the policy was queried at.
fn rollout_window(
    env: &mut dyn UmdpEnv,
    actor: &dyn RolloutActor,
    start: &[f64],
    subgoal: &[f64],
    c: usize,
    rng: &mut ChaCha8Rng,
    visit: &mut dyn FnMut(&[f64], &[f64]),
) -> Vec<f64> {
    env.reset(rng);
    env.set_state(start);
    let mut state = start.to_vec();
    let mut goal = subgoal.to_vec();
    for _ in 0..c {
        visit(&state, &goal);
        let action = actor.act(&state, &goal, rng);
        let (next, _, _) = env.step(&action);
        goal = goal_transition(&state, &goal, &next);
        state = next;
    }
    state
}

/// Histogram of final states after `n_rollouts` windows of length `c`.
pub fn abstracted_transition_histogram(
    env: &mut dyn UmdpEnv,
    actor: &dyn RolloutActor,
    start: &[f64],
    subgoal: &[f64],
    c: usize,
    n_rollouts: usize,
    grid_cell: f64,
    rng: &mut ChaCha8Rng,
) -> HashMap<Vec<i64>, u64> {
    assert!(n_rollouts > 0, "zero rollouts");
    assert!(grid_cell > 0.0, "grid cell must be positive");
    let mut hist = HashMap::new();
    let mut no_visit = |_: &[f64], _: &[f64]| {};
    for _ in 0..n_rollouts {
        let end = rollout_window(env, actor, start, subgoal, c, rng, &mut no_visit);
        *hist.entry(grid_key(&end, grid_cell)).or_insert(0) += 1;
    }
    hist
}

/// Total variation distance between two equal-count histograms.
pub fn histogram_tv(a: &HashMap<Vec<i64>, u64>, b: &HashMap<Vec<i64>, u64>, n: u64) -> f64 {
    let mut keys: Vec<&Vec<i64>> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut tv = 0.0;
    for key in keys {
        let pa = *a.get(key).unwrap_or(&0) as f64 / n as f64;
        let pb = *b.get(key).unwrap_or(&0) as f64 / n as f64;
        tv += (pa - pb).abs();
    }
    tv / 2.0
}

/// Additive slack for comparing two empirical distributions of `n` samples,
/// at confidence `1 - delta` with `delta = 0.01`.
pub fn statistical_slack(n_rollouts: usize) -> f64 {
    let delta: f64 = 0.01;
    3.0 * ((2.0 / delta).ln() / (2.0 * n_rollouts as f64)).sqrt()
}

/// Outcome of one empirical drift check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub empirical_tv: f64,
    pub max_kl: f64,
    pub epsilon: f64,
    pub bound: f64,
    pub slack: f64,
    pub holds: bool,
    pub n_rollouts: usize,
    pub c: usize,
    /// Caveat: this is a statistical check, not a proof.
    pub note: String,
}

/// Empirically verifies the drift bound `|P'_abs - P_abs| <= 2 * eps * c`
/// between two policy snapshots.
///
/// Both snapshots roll out `n_rollouts` windows from `(start, subgoal)`; the
/// final states are histogrammed at `grid_cell` resolution and compared in
/// total variation. `eps` comes from the worst closed-form KL over every
/// state the rollouts visited.
#[allow(clippy::too_many_arguments)]
pub fn theorem1_check(
    env: &mut dyn UmdpEnv,
    old_policy: &Policy,
    new_policy: &Policy,
    start: &[f64],
    subgoal: &[f64],
    c: usize,
    n_rollouts: usize,
    grid_cell: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Theorem1Report> {
    if n_rollouts == 0 {
        return Err(Error::InvalidConfig("theorem check needs at least one rollout".into()));
    }
    let mut max_kl = 0.0f64;
    let mut hist_old: HashMap<Vec<i64>, u64> = HashMap::new();
    let mut hist_new: HashMap<Vec<i64>, u64> = HashMap::new();
    for (policy, hist) in [(old_policy, &mut hist_old), (new_policy, &mut hist_new)] {
        for _ in 0..n_rollouts {
            let mut track = |s: &[f64], g: &[f64]| {
                let probe = [(s.to_vec(), g.to_vec())];
                let (_, kl) = policy_kl_gaussian(old_policy, new_policy, &probe);
                max_kl = max_kl.max(kl);
            };
            let end = rollout_window(env, policy, start, subgoal, c, rng, &mut track);
            *hist.entry(grid_key(&end, grid_cell)).or_insert(0) += 1;
        }
    }
    let empirical_tv = histogram_tv(&hist_old, &hist_new, n_rollouts as u64);
    let epsilon = pinsker_epsilon(max_kl)?;
    let bound = 2.0 * epsilon * c as f64;
    let slack = statistical_slack(n_rollouts);
    Ok(Theorem1Report {
        empirical_tv,
        max_kl,
        epsilon,
        bound,
        slack,
        holds: empirical_tv <= bound + slack,
        n_rollouts,
        c,
        note: "epsilon is a maximum over visited states, not a supremum over all states; \
               the comparison is a statistical test"
            .into(),
    })
}
