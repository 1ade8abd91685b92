//! The training loop.
//!
//! One environment step drives: sub-goal emission or advance, a low-level
//! exploratory action, replay stores at both levels, interval-gated critic
//! and actor updates (with sub-goal relabeling at sampling time on the high
//! level), target averaging, and periodic evaluation with metric emission.
//!
//! The loop is single-threaded and a pure function of the seed: the one loop
//! RNG covers exploration, goal sampling, batch sampling, and relabeling,
//! while evaluation episodes use stateless derived streams so they cannot
//! perturb the training sequence. Checkpointing captures the whole `Trainer`
//! and resumes bit-identically on the same build.

use std::path::Path;
use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shiro_core::diagnostics::{policy_kl_gaussian, FinalPositionLog};
use shiro_core::env::{load_env, GoalMode, UmdpEnv};
use shiro_core::hrl::{
    goal_transition, intrinsic_reward, relabel_subgoal, GoalConditionedTransition,
    HighLevelTransition, ReplayBuffer, SubgoalScheduler,
};
use shiro_core::soft_rl::{LevelAgent, TransitionView};

use crate::checkpoint::{
    Agents, Checkpoint, LoopState, RngState, WindowState, CHECKPOINT_VERSION,
};
use crate::config::RunConfig;
use crate::metrics::{MetricsRecord, MetricsWriter};
use crate::TrainError;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sub-stream seeds (evaluation episodes, per-agent init).
pub fn derive_seed(master: u64, domain: u64, index: u64) -> u64 {
    mix(master ^ mix(domain) ^ mix(index.wrapping_mul(0x2545_F491_4F6C_DD1D)))
}

pub struct Trainer {
    pub cfg: RunConfig,
    env: Box<dyn UmdpEnv>,
    rng: ChaCha8Rng,
    pub agents: Agents,
    pub low_buffer: ReplayBuffer<GoalConditionedTransition>,
    pub high_buffer: ReplayBuffer<HighLevelTransition>,
    pub loop_state: LoopState,
    pub env_step: u64,
    pub final_positions: FinalPositionLog,
    started: Instant,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let mut env = load_env(&cfg.env_name).map_err(|e| TrainError::Config(e.to_string()))?;
        env.set_goal_mode(GoalMode::Train);
        let state_dim = env.state_dim();
        let goal_dim = env.goal_dim();
        let action_scale = vec![env.action_limit(); env.action_dim()];
        let subgoal_scale = vec![env.subgoal_limit(); goal_dim];

        let agents = if cfg.variant.is_hierarchical() {
            let low = LevelAgent::new(
                cfg.low_level_config(),
                state_dim,
                goal_dim,
                action_scale,
                derive_seed(cfg.seed, 0xA11, 0),
            )
            .map_err(|e| TrainError::Config(e.to_string()))?;
            let high = LevelAgent::new(
                cfg.high_level_config(),
                state_dim,
                goal_dim,
                subgoal_scale,
                derive_seed(cfg.seed, 0xB22, 0),
            )
            .map_err(|e| TrainError::Config(e.to_string()))?;
            Agents::Hierarchical {
                low: Box::new(low),
                high: Box::new(high),
            }
        } else {
            let agent = LevelAgent::new(
                cfg.low_level_config(),
                state_dim,
                goal_dim,
                action_scale,
                derive_seed(cfg.seed, 0xC33, 0),
            )
            .map_err(|e| TrainError::Config(e.to_string()))?;
            Agents::Flat {
                agent: Box::new(agent),
            }
        };

        let loop_state = LoopState::fresh(cfg.c);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let replay = cfg.replay_capacity;
        Ok(Self {
            cfg,
            env,
            rng,
            agents,
            low_buffer: ReplayBuffer::new(replay),
            high_buffer: ReplayBuffer::new(replay),
            loop_state,
            env_step: 0,
            final_positions: FinalPositionLog::new(),
            started: Instant::now(),
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, TrainError> {
        ckpt.config.validate()?;
        let mut env =
            load_env(&ckpt.config.env_name).map_err(|e| TrainError::Config(e.to_string()))?;
        env.set_goal_mode(GoalMode::Train);
        if !ckpt.loop_state.needs_reset {
            env.restore_episode(
                &ckpt.loop_state.state,
                &ckpt.loop_state.episode_goal,
                ckpt.loop_state.episode_step,
            );
        }
        Ok(Self {
            cfg: ckpt.config,
            env,
            rng: ckpt.rng.restore()?,
            agents: ckpt.agents,
            low_buffer: ckpt.low_buffer,
            high_buffer: ckpt.high_buffer,
            loop_state: ckpt.loop_state,
            env_step: ckpt.env_step,
            final_positions: ckpt.final_positions,
            started: Instant::now(),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut loop_state = self.loop_state.clone();
        loop_state.wall_time_offset = self.wall_time_s();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            env_step: self.env_step,
            rng: RngState::capture(&self.rng),
            agents: self.agents.clone(),
            loop_state,
            low_buffer: self.low_buffer.clone(),
            high_buffer: self.high_buffer.clone(),
            final_positions: self.final_positions.clone(),
        }
    }

    fn wall_time_s(&self) -> f64 {
        self.loop_state.wall_time_offset + self.started.elapsed().as_secs_f64()
    }

    /// Runs one environment step (plus any updates it triggers); returns a
    /// metrics record when this step is an evaluation checkpoint.
    pub fn step_once(&mut self) -> Result<Option<MetricsRecord>, TrainError> {
        if self.loop_state.needs_reset {
            let (s, g) = self.env.reset(&mut self.rng);
            self.loop_state.state = s;
            self.loop_state.episode_goal = g;
            self.loop_state.episode_step = 0;
            self.loop_state.scheduler.begin_episode();
            self.loop_state.window = None;
            self.loop_state.needs_reset = false;
        }

        match &self.agents {
            Agents::Hierarchical { .. } => self.step_hierarchical()?,
            Agents::Flat { .. } => self.step_flat()?,
        }

        if self.env_step % self.cfg.eval_interval == 0 {
            return Ok(Some(self.make_record()));
        }
        Ok(None)
    }

    fn step_hierarchical(&mut self) -> Result<(), TrainError> {
        let Self {
            cfg,
            env,
            rng,
            agents,
            low_buffer,
            high_buffer,
            loop_state,
            env_step,
            final_positions,
            ..
        } = self;
        let (low, high) = match agents {
            Agents::Hierarchical { low, high } => (low.as_mut(), high.as_mut()),
            _ => unreachable!(),
        };

        // Sub-goal emission or carry-over.
        if loop_state.scheduler.needs_emission() {
            let subgoal =
                high.actor
                    .explore_action(&loop_state.state, &loop_state.episode_goal, rng);
            loop_state.scheduler.emit(subgoal.clone());
            loop_state.window = Some(WindowState {
                states: vec![loop_state.state.clone()],
                actions: Vec::new(),
                rewards: Vec::new(),
                subgoal,
            });
        }
        let subgoal = loop_state.scheduler.subgoal().to_vec();

        // Low-level action and environment step.
        let action = low.actor.explore_action(&loop_state.state, &subgoal, rng);
        let (next, r_env, done) = env.step(&action);
        if !r_env.is_finite() {
            return Err(TrainError::Numerical {
                step: *env_step,
                detail: format!("environment reward {r_env}"),
            });
        }

        let next_subgoal = goal_transition(&loop_state.state, &subgoal, &next);
        let r_int = intrinsic_reward(&loop_state.state, &subgoal, &next, low.cfg.reward_scale);
        low_buffer.push(GoalConditionedTransition {
            state: loop_state.state.clone(),
            goal: subgoal.clone(),
            action: action.clone(),
            reward: r_int,
            next_state: next.clone(),
            next_goal: next_subgoal,
            done,
        });

        let window = loop_state.window.as_mut().expect("window open while stepping");
        window.actions.push(action);
        window.rewards.push(r_env);
        window.states.push(next.clone());

        loop_state.scheduler.after_step(&loop_state.state, &next);

        // Close the window on the sub-goal boundary or episode truncation.
        if loop_state.scheduler.needs_emission() || done {
            let w = loop_state.window.take().expect("window open at close");
            high_buffer.push(HighLevelTransition::new(
                w.states,
                w.actions,
                w.rewards,
                w.subgoal,
                loop_state.episode_goal.clone(),
                high.cfg.reward_scale,
                done,
            ));
        }

        loop_state.state = next;
        loop_state.episode_step += 1;
        *env_step += 1;

        // Arm the per-update KL probe far enough ahead of the metrics record
        // that the next actor update resolves it.
        let lead = (low.cfg.actor_delay * low.cfg.train_interval as u64)
            .min(cfg.eval_interval.saturating_sub(1));
        if (*env_step + lead) % cfg.eval_interval == 0 {
            loop_state.kl_pending = true;
        }
        let c64 = cfg.c as u64;
        if low.cfg.alpha_kl > 0.0 && *env_step % c64 == 0 {
            low.refresh_kl_reference();
        }
        if high.cfg.alpha_kl > 0.0 && *env_step % c64 == 0 {
            high.refresh_kl_reference();
        }

        // Low-level gradient trigger.
        let mut numerical: Option<TrainError> = None;
        if *env_step % low.cfg.train_interval as u64 == 0 && low_buffer.len() >= low.cfg.batch_size
        {
            let sampled = low_buffer.sample(low.cfg.batch_size, rng);
            let views: Vec<TransitionView> = sampled.iter().map(|t| (*t).into()).collect();
            let actor_updates = (low.update_count + 1) % low.cfg.actor_delay == 0;
            let snapshot = if loop_state.kl_pending && actor_updates {
                Some(low.actor.clone())
            } else {
                None
            };
            let outcome = low.update(&views, rng);
            loop_state.acc_critic_low.add(outcome.critic_loss);
            if let Some(a) = outcome.actor_loss {
                loop_state.acc_actor_low.add(a);
            }
            if !outcome.critic_loss.is_finite()
                || outcome.actor_loss.map(|l| !l.is_finite()).unwrap_or(false)
            {
                numerical = Some(TrainError::Numerical {
                    step: *env_step,
                    detail: format!("low-level losses {outcome:?}"),
                });
            }
            if let Some(old) = snapshot {
                let probe = sample_probe(low_buffer, cfg.kl_probe_size, rng);
                let (mean, max) = policy_kl_gaussian(&old, &low.actor, &probe);
                loop_state.kl_last_mean = mean;
                loop_state.kl_last_max = max;
                loop_state.kl_pending = false;
            }
        }
        if *env_step % low.cfg.target_update_interval as u64 == 0 && low.update_count > 0 {
            low.update_targets();
        }

        // High-level gradient trigger with relabeling at sampling time.
        if *env_step % high.cfg.train_interval as u64 == 0
            && high_buffer.len() >= high.cfg.batch_size
        {
            let sampled = high_buffer.sample(high.cfg.batch_size, rng);
            let limit = env.subgoal_limit();
            let relabeled: Vec<(&HighLevelTransition, Vec<f64>)> = sampled
                .into_iter()
                .map(|hl| {
                    let corrected = relabel_subgoal(hl, &low.actor, limit, rng);
                    (hl, corrected)
                })
                .collect();
            let views: Vec<TransitionView> = relabeled
                .iter()
                .map(|(hl, corrected)| TransitionView {
                    state: hl.start_state(),
                    goal: &hl.episode_goal,
                    action: corrected,
                    reward: hl.reward_sum,
                    next_state: hl.final_state(),
                    next_goal: &hl.episode_goal,
                    done: hl.done,
                })
                .collect();
            let outcome = high.update(&views, rng);
            loop_state.acc_critic_high.add(outcome.critic_loss);
            if let Some(a) = outcome.actor_loss {
                loop_state.acc_actor_high.add(a);
            }
            if !outcome.critic_loss.is_finite()
                || outcome.actor_loss.map(|l| !l.is_finite()).unwrap_or(false)
            {
                numerical = numerical.or(Some(TrainError::Numerical {
                    step: *env_step,
                    detail: format!("high-level losses {outcome:?}"),
                }));
            }
        }
        if *env_step % high.cfg.target_update_interval as u64 == 0 && high.update_count > 0 {
            high.update_targets();
        }

        if done {
            let success = env.is_success(&loop_state.state, &loop_state.episode_goal);
            final_positions.record(&loop_state.state, success);
            loop_state.episode_index += 1;
            loop_state.needs_reset = true;
        }
        match numerical {
            Some(err) => Err(err),
            None => Ok(()),
        }
    }

    fn step_flat(&mut self) -> Result<(), TrainError> {
        let Self {
            cfg,
            env,
            rng,
            agents,
            low_buffer,
            loop_state,
            env_step,
            final_positions,
            ..
        } = self;
        let agent = match agents {
            Agents::Flat { agent } => agent.as_mut(),
            _ => unreachable!(),
        };

        let goal = loop_state.episode_goal.clone();
        let action = agent.actor.explore_action(&loop_state.state, &goal, rng);
        let (next, r_env, done) = env.step(&action);
        low_buffer.push(GoalConditionedTransition {
            state: loop_state.state.clone(),
            goal: goal.clone(),
            action,
            reward: agent.cfg.reward_scale * r_env,
            next_state: next.clone(),
            next_goal: goal,
            done,
        });
        loop_state.state = next;
        loop_state.episode_step += 1;
        *env_step += 1;

        let lead = (agent.cfg.actor_delay * agent.cfg.train_interval as u64)
            .min(cfg.eval_interval.saturating_sub(1));
        if (*env_step + lead) % cfg.eval_interval == 0 {
            loop_state.kl_pending = true;
        }
        if agent.cfg.alpha_kl > 0.0 && *env_step % cfg.c as u64 == 0 {
            agent.refresh_kl_reference();
        }

        let mut numerical: Option<TrainError> = None;
        if *env_step % agent.cfg.train_interval as u64 == 0
            && low_buffer.len() >= agent.cfg.batch_size
        {
            let sampled = low_buffer.sample(agent.cfg.batch_size, rng);
            let views: Vec<TransitionView> = sampled.iter().map(|t| (*t).into()).collect();
            let actor_updates = (agent.update_count + 1) % agent.cfg.actor_delay == 0;
            let snapshot = if loop_state.kl_pending && actor_updates {
                Some(agent.actor.clone())
            } else {
                None
            };
            let outcome = agent.update(&views, rng);
            loop_state.acc_critic_low.add(outcome.critic_loss);
            if let Some(a) = outcome.actor_loss {
                loop_state.acc_actor_low.add(a);
            }
            if !outcome.critic_loss.is_finite()
                || outcome.actor_loss.map(|l| !l.is_finite()).unwrap_or(false)
            {
                numerical = Some(TrainError::Numerical {
                    step: *env_step,
                    detail: format!("flat-agent losses {outcome:?}"),
                });
            }
            if let Some(old) = snapshot {
                let probe = sample_probe(low_buffer, cfg.kl_probe_size, rng);
                let (mean, max) = policy_kl_gaussian(&old, &agent.actor, &probe);
                loop_state.kl_last_mean = mean;
                loop_state.kl_last_max = max;
                loop_state.kl_pending = false;
            }
        }
        if *env_step % agent.cfg.target_update_interval as u64 == 0 && agent.update_count > 0 {
            agent.update_targets();
        }

        if done {
            let success = env.is_success(&loop_state.state, &loop_state.episode_goal);
            final_positions.record(&loop_state.state, success);
            loop_state.episode_index += 1;
            loop_state.needs_reset = true;
        }
        match numerical {
            Some(err) => Err(err),
            None => Ok(()),
        }
    }

    fn make_record(&mut self) -> MetricsRecord {
        let (success_rate, mean_return) = evaluate(
            &self.agents,
            self.env.as_ref(),
            self.cfg.c,
            self.cfg.eval_episodes,
            self.cfg.seed,
            self.env_step,
        );
        let (alpha_high, alpha_low, critic_high, actor_high) = match &self.agents {
            Agents::Hierarchical { low, high } => (
                high.alpha(),
                low.alpha(),
                self.loop_state.acc_critic_high.mean(),
                self.loop_state.acc_actor_high.mean(),
            ),
            Agents::Flat { agent } => (0.0, agent.alpha(), 0.0, 0.0),
        };
        let record = MetricsRecord {
            step: self.env_step,
            success_rate,
            mean_return,
            kl_mean: self.loop_state.kl_last_mean,
            kl_max: self.loop_state.kl_last_max,
            alpha_high,
            alpha_low,
            critic_loss_high: critic_high,
            critic_loss_low: self.loop_state.acc_critic_low.mean(),
            actor_loss_high: actor_high,
            actor_loss_low: self.loop_state.acc_actor_low.mean(),
            wall_time_s: self.wall_time_s(),
        };
        self.loop_state.acc_critic_low.reset();
        self.loop_state.acc_actor_low.reset();
        self.loop_state.acc_critic_high.reset();
        self.loop_state.acc_actor_high.reset();
        self.loop_state.last_metrics_step = Some(self.env_step);
        record
    }
}

fn sample_probe(
    buffer: &ReplayBuffer<GoalConditionedTransition>,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    buffer
        .sample(n, rng)
        .into_iter()
        .map(|t| (t.state.clone(), t.goal.clone()))
        .collect()
}

/// Noise-free evaluation on the fixed goal: deterministic policies act with
/// their mean, stochastic policies squash their pre-squash mean. Success is
/// judged at the episode's terminal state. Each episode runs on its own
/// derived random stream, so evaluation never perturbs training.
pub fn evaluate(
    agents: &Agents,
    env_proto: &dyn UmdpEnv,
    c: usize,
    n_episodes: usize,
    master_seed: u64,
    env_step: u64,
) -> (f64, f64) {
    assert!(n_episodes >= 1, "evaluation needs at least one episode");
    let mut successes = 0usize;
    let mut total_return = 0.0;
    for episode in 0..n_episodes {
        let mut env = env_proto.boxed_clone();
        env.set_goal_mode(GoalMode::Eval);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            master_seed,
            0xE7A1 ^ env_step,
            episode as u64,
        ));
        let (mut state, goal) = env.reset(&mut rng);
        let mut episode_return = 0.0;
        match agents {
            Agents::Hierarchical { low, high } => {
                let mut scheduler = SubgoalScheduler::new(c);
                scheduler.begin_episode();
                loop {
                    if scheduler.needs_emission() {
                        scheduler.emit(high.actor.eval_action(&state, &goal));
                    }
                    let action = low.actor.eval_action(&state, scheduler.subgoal());
                    let (next, reward, done) = env.step(&action);
                    scheduler.after_step(&state, &next);
                    state = next;
                    episode_return += reward;
                    if done {
                        break;
                    }
                }
            }
            Agents::Flat { agent } => loop {
                let action = agent.actor.eval_action(&state, &goal);
                let (next, reward, done) = env.step(&action);
                state = next;
                episode_return += reward;
                if done {
                    break;
                }
            },
        }
        if env.is_success(&state, &goal) {
            successes += 1;
        }
        total_return += episode_return;
    }
    (
        successes as f64 / n_episodes as f64,
        total_return / n_episodes as f64,
    )
}

/// Evaluates a scripted actor instead of the learned policies; used to pin
/// the evaluation protocol against a known-good agent.
pub fn evaluate_scripted(
    env_proto: &dyn UmdpEnv,
    n_episodes: usize,
    mut act: impl FnMut(&[f64], &[f64]) -> Vec<f64>,
) -> (f64, f64) {
    let mut successes = 0usize;
    let mut total_return = 0.0;
    for _ in 0..n_episodes {
        let mut env = env_proto.boxed_clone();
        env.set_goal_mode(GoalMode::Eval);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut state, goal) = env.reset(&mut rng);
        let mut episode_return = 0.0;
        loop {
            let action = act(&state, &goal);
            let (next, reward, done) = env.step(&action);
            state = next;
            episode_return += reward;
            if done {
                break;
            }
        }
        if env.is_success(&state, &goal) {
            successes += 1;
        }
        total_return += episode_return;
    }
    (
        successes as f64 / n_episodes as f64,
        total_return / n_episodes as f64,
    )
}

/// Artifacts of one `train_run` invocation. `records` covers this invocation
/// only; a resumed run's earlier records live in its original metrics file.
pub struct RunArtifacts {
    pub records: Vec<MetricsRecord>,
    pub checkpoint: Checkpoint,
}

/// Runs training to `cfg.total_env_steps` (or until `stop` fires), streaming
/// metrics and writing `run_config.json`, `metrics.jsonl`,
/// `final_positions.csv`, and `checkpoint.json` under `out_dir` when given.
pub fn train_run(
    cfg: &RunConfig,
    out_dir: Option<&Path>,
    resume: Option<Checkpoint>,
    stop: Option<&dyn Fn(&MetricsRecord) -> bool>,
) -> Result<RunArtifacts, TrainError> {
    let mut trainer = match resume {
        Some(ckpt) => {
            if !cfg.compatible_for_resume(&ckpt.config) {
                return Err(TrainError::Config(
                    "resume config differs from checkpoint in more than total_env_steps".into(),
                ));
            }
            let mut ckpt = ckpt;
            ckpt.config.total_env_steps = cfg.total_env_steps;
            Trainer::from_checkpoint(ckpt)?
        }
        None => Trainer::new(cfg.clone())?,
    };

    let mut writer = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .map_err(|e| TrainError::Other(format!("cannot create {}: {e}", dir.display())))?;
            let config_text = serde_json::to_string_pretty(&trainer.cfg)
                .map_err(|e| TrainError::Other(e.to_string()))?;
            std::fs::write(dir.join("run_config.json"), config_text)
                .map_err(|e| TrainError::Other(e.to_string()))?;
            let fresh = trainer.loop_state.last_metrics_step.is_none();
            let file = std::fs::OpenOptions::new()
                .create(true)
                .append(!fresh)
                .write(true)
                .truncate(fresh)
                .open(dir.join("metrics.jsonl"))
                .map_err(|e| TrainError::Other(e.to_string()))?;
            Some(MetricsWriter::with_watermark(
                std::io::BufWriter::new(file),
                trainer.loop_state.last_metrics_step,
            ))
        }
        None => None,
    };

    let mut records = Vec::new();
    let mut stopped = false;
    while trainer.env_step < trainer.cfg.total_env_steps && !stopped {
        let step_result = trainer.step_once();
        match step_result {
            Ok(Some(record)) => {
                if let Some(w) = writer.as_mut() {
                    w.emit(&record)?;
                }
                if let Some(pred) = stop {
                    stopped = pred(&record);
                }
                records.push(record);
            }
            Ok(None) => {}
            Err(err) => {
                if let (Some(dir), TrainError::Numerical { step, detail }) = (out_dir, &err) {
                    let dump = serde_json::json!({
                        "step": step,
                        "detail": detail,
                        "variant": trainer.cfg.variant.to_string(),
                        "seed": trainer.cfg.seed,
                    });
                    let _ = std::fs::write(
                        dir.join("numerical_abort.json"),
                        serde_json::to_string_pretty(&dump).unwrap_or_default(),
                    );
                }
                return Err(err);
            }
        }
    }

    let checkpoint = trainer.to_checkpoint();
    if let Some(dir) = out_dir {
        crate::checkpoint::save_checkpoint(&checkpoint, &dir.join("checkpoint.json"))?;
        let mut buf = Vec::new();
        trainer
            .final_positions
            .write_csv(&mut buf)
            .map_err(|e| TrainError::Other(e.to_string()))?;
        std::fs::write(dir.join("final_positions.csv"), buf)
            .map_err(|e| TrainError::Other(e.to_string()))?;
    }
    Ok(RunArtifacts {
        records,
        checkpoint,
    })
}
