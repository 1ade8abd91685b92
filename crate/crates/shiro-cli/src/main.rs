//! Command-line front end: `train`, `eval`, `kl-check`, and `export-plots`.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shiro_cli::checkpoint::{load_checkpoint, Agents};
use shiro_cli::config::{RunConfig, Variant};
use shiro_cli::trainer::{derive_seed, evaluate, train_run};
use shiro_cli::TrainError;
use shiro_core::diagnostics::{pinsker_epsilon, policy_kl_gaussian, theorem1_check};
use shiro_core::env::{load_env, GoalMode};

#[derive(Parser)]
#[command(
    name = "shiro",
    about = "Two-level entropy-regularized goal-conditioned RL on point-mass tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run training from a JSON config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's variant.
        #[arg(long)]
        variant: Option<Variant>,
        /// Output directory (default: runs/<env>-<variant>-s<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint's policies without exploration noise.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Measure policy KL between two checkpoints and empirically check the
    /// drift of the c-step abstracted transition distribution.
    KlCheck {
        #[arg(long)]
        checkpoint_a: PathBuf,
        #[arg(long)]
        checkpoint_b: PathBuf,
        #[arg(long)]
        rollouts: usize,
        #[arg(long, default_value_t = 0.5)]
        grid_cell: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Emit CSV plot series for a finished run directory.
    ExportPlots {
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                TrainError::Config(_) => 2,
                TrainError::Numerical { .. } => 3,
                TrainError::Other(_) => 1,
            };
            std::process::exit(code);
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), TrainError> {
    match cli.command {
        Command::Train {
            config,
            seed,
            variant,
            out,
            resume,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(variant) = variant {
                cfg.variant = variant;
            }
            cfg.validate()?;
            let out_dir = out.unwrap_or_else(|| {
                PathBuf::from(format!(
                    "runs/{}-{}-s{}",
                    cfg.env_name, cfg.variant, cfg.seed
                ))
            });
            let resume_ckpt = match resume {
                Some(path) => Some(load_checkpoint(&path)?),
                None => None,
            };
            let artifacts = train_run(&cfg, Some(&out_dir), resume_ckpt, None)?;
            let last = artifacts.records.last();
            println!(
                "{}",
                serde_json::json!({
                    "out_dir": out_dir,
                    "env_steps": artifacts.checkpoint.env_step,
                    "records": artifacts.records.len(),
                    "final_success_rate": last.map(|r| r.success_rate),
                    "final_mean_return": last.map(|r| r.mean_return),
                })
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
        } => {
            if episodes == 0 {
                return Err(TrainError::Config("episodes must be positive".into()));
            }
            let ckpt = load_checkpoint(&checkpoint)?;
            let env = load_env(&ckpt.config.env_name)
                .map_err(|e| TrainError::Config(e.to_string()))?;
            let (success_rate, mean_return) = evaluate(
                &ckpt.agents,
                env.as_ref(),
                ckpt.config.c,
                episodes,
                seed,
                ckpt.env_step,
            );
            println!(
                "{}",
                serde_json::json!({
                    "checkpoint_step": ckpt.env_step,
                    "episodes": episodes,
                    "success_rate": success_rate,
                    "mean_return": mean_return,
                })
            );
            Ok(())
        }
        Command::KlCheck {
            checkpoint_a,
            checkpoint_b,
            rollouts,
            grid_cell,
            seed,
        } => {
            let a = load_checkpoint(&checkpoint_a)?;
            let b = load_checkpoint(&checkpoint_b)?;
            if a.config.variant != b.config.variant || a.config.env_name != b.config.env_name {
                return Err(TrainError::Config(
                    "checkpoints must share variant and environment".into(),
                ));
            }
            let old_actor = &a.agents.action_level().actor;
            let new_actor = &b.agents.action_level().actor;

            // Probe states come from the newer checkpoint's replay buffer.
            let probe_n = b.config.kl_probe_size.min(b.low_buffer.len());
            if probe_n == 0 {
                return Err(TrainError::Config(
                    "checkpoint B holds no transitions to probe".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x4B, 0));
            let probe: Vec<(Vec<f64>, Vec<f64>)> = b
                .low_buffer
                .sample(probe_n, &mut rng)
                .into_iter()
                .map(|t| (t.state.clone(), t.goal.clone()))
                .collect();
            let (mean_kl, max_kl) = policy_kl_gaussian(old_actor, new_actor, &probe);
            let epsilon = pinsker_epsilon(max_kl).map_err(|e| TrainError::Other(e.to_string()))?;
            let c = b.config.c;

            let theorem = if let (
                Agents::Hierarchical { high, .. },
                Agents::Hierarchical { .. },
            ) = (&b.agents, &a.agents)
            {
                let mut env = load_env(&b.config.env_name)
                    .map_err(|e| TrainError::Config(e.to_string()))?;
                env.set_goal_mode(GoalMode::Eval);
                let (start, goal) = env.reset(&mut rng);
                let subgoal = high.actor.eval_action(&start, &goal);
                Some(
                    theorem1_check(
                        env.as_mut(),
                        old_actor,
                        new_actor,
                        &start,
                        &subgoal,
                        c,
                        rollouts,
                        grid_cell,
                        &mut rng,
                    )
                    .map_err(|e| TrainError::Other(e.to_string()))?,
                )
            } else {
                None
            };

            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "probe_states": probe_n,
                    "mean_kl": mean_kl,
                    "max_kl": max_kl,
                    "pinsker_epsilon": epsilon,
                    "bound_2ec": 2.0 * epsilon * c as f64,
                    "theorem1": theorem,
                    "note": "epsilon from probe/visited states only; a statistical check, not a proof",
                }))
                .expect("report serializes"),
            );
            Ok(())
        }
        Command::ExportPlots { run } => {
            let written = shiro_cli::export::export_plots(&run)?;
            for path in written {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}
