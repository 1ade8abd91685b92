use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiro_bench::{critic, deterministic_policy, level_agent, policy_net, random_window};
use shiro_core::env::{GoalMode, UmdpEnv};
use shiro_core::hrl::relabel_subgoal;
use shiro_core::nn::Gradients;
use shiro_core::soft_rl::TransitionView;
use shiro_core::PointMazeEnv;
use std::hint::black_box;

fn bench_mlp(c: &mut Criterion) {
    let net = policy_net(64);
    let x = [0.3, -0.8, 4.0, 2.5];
    c.bench_function("mlp_forward_64x64", |b| {
        b.iter(|| black_box(net.forward(black_box(&x))))
    });
    let upstream = [1.0, -0.5];
    c.bench_function("mlp_backward_64x64", |b| {
        let mut grads = Gradients::zeros_like(&net);
        b.iter(|| {
            net.backward_accumulate(black_box(&x), black_box(&upstream), &mut grads, 1.0)
        })
    });
}

fn bench_level_update(c: &mut Criterion) {
    for (name, stochastic) in [("level_update_det", false), ("level_update_sto", true)] {
        let mut agent = level_agent(64, stochastic);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let owned: Vec<_> = (0..128)
            .map(|_| {
                (
                    vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                    vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                    vec![rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)],
                    rng.gen_range(-5.0..0.0),
                    vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                    vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                )
            })
            .collect();
        let batch: Vec<TransitionView> = owned
            .iter()
            .map(|(s, g, a, r, ns, ng)| TransitionView {
                state: s,
                goal: g,
                action: a,
                reward: *r,
                next_state: ns,
                next_goal: ng,
                done: false,
            })
            .collect();
        c.bench_function(name, |b| b.iter(|| agent.update(black_box(&batch), &mut rng)));
    }
}

fn bench_relabel(c: &mut Criterion) {
    let policy = deterministic_policy(64);
    let window = random_window(10, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    c.bench_function("relabel_one_window", |b| {
        b.iter(|| black_box(relabel_subgoal(black_box(&window), &policy, 10.0, &mut rng)))
    });
}

fn bench_env(c: &mut Criterion) {
    let mut env = PointMazeEnv::point_maze();
    env.set_goal_mode(GoalMode::Train);
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    env.reset(&mut rng);
    let mut flip = 1.0;
    c.bench_function("env_step", |b| {
        b.iter(|| {
            flip = -flip;
            black_box(env.step(black_box(&[0.7 * flip, 0.2])))
        })
    });
    let critic = critic(64);
    c.bench_function("critic_min_q", |b| {
        b.iter(|| black_box(critic.min_q(&[0.1, 0.2], &[1.0, 2.0], &[0.3, -0.3])))
    });
}

criterion_group!(benches, bench_mlp, bench_level_update, bench_relabel, bench_env);
criterion_main!(benches);
