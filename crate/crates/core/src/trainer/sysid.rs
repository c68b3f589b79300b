use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::TrainConfig;
use crate::actor_critic::{ReplayBuffer, Transition};
use crate::car_env::{CarEnv, CONTROL_DIM, STATE_DIM};
use crate::error::Result;
use crate::node_model::{model_loss, NodeModel, NodeTrainer, TrajectoryBatch};

#[derive(Clone, Debug, PartialEq)]
pub struct SysidReport {
    pub steps: usize,
    /// `(step, training loss)` every 100 steps.
    pub losses: Vec<(usize, f64)>,
    /// Mean one-step L1 error on held-out episodes, summed over state
    /// components.
    pub one_step_l1: f64,
    /// Mean L1 error of the second state of a two-step open-loop rollout.
    pub two_step_l1: f64,
    pub seconds: f64,
}

/// Episodes driven by Gaussian random controls with std `cfg.explore_std`.
pub fn collect_random_episodes(cfg: &TrainConfig, episodes: usize, seed: u64) -> Result<ReplayBuffer> {
    let len = cfg.env.episode_length;
    let mut buffer = ReplayBuffer::new((episodes * len).max(1), seed)?;
    let mut env = CarEnv::new(cfg.env.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for _ in 0..episodes {
        let mut x = env.reset();
        while !env.done() {
            let k = env.step_index();
            let t = env.time();
            let noise: f64 = rng.sample(StandardNormal);
            let (out, u) = env.step(cfg.explore_std * noise)?;
            buffer.push(Transition {
                t,
                state: x.0.to_vec(),
                control: vec![u],
                reward: out.reward,
                cost: out.cost,
                next_state: out.next_state.0.to_vec(),
                done: false,
                continues: k > 0,
            });
            x = out.next_state;
        }
    }
    Ok(buffer)
}

fn all_windows(buffer: &ReplayBuffer, horizon: usize) -> Result<TrajectoryBatch> {
    let starts: Vec<usize> = (0..buffer.len().saturating_sub(horizon - 1))
        .filter(|&s| (1..horizon).all(|k| buffer.get(s + k).is_some_and(|t| t.continues)))
        .collect();
    buffer.windows_at(&starts, horizon)
}

/// L1 error of the last state of an open-loop rollout over each window.
pub fn terminal_l1(model: &NodeModel, batch: &TrajectoryBatch) -> Result<f64> {
    let dt = model.integrator().interval;
    let mut cur = batch.states[0].clone();
    for k in 0..batch.horizon() {
        let t = &batch.start_times + k as f64 * dt;
        cur = model.predict_batch(t.view(), cur.view(), batch.controls[k].view())?;
    }
    let err = &cur - &batch.states[batch.horizon()];
    Ok(err.iter().map(|e| e.abs()).sum::<f64>() / batch.len() as f64)
}

/// Standalone dynamics identification: random-control data, scaling fit,
/// `cfg.sysid_steps` gradient steps on windows of `cfg.model_horizon`,
/// then held-out one- and two-step errors.
pub fn run_sysid(cfg: &TrainConfig) -> Result<(NodeModel, SysidReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let train = collect_random_episodes(cfg, cfg.sysid_episodes.max(1), cfg.seed)?;
    let test = collect_random_episodes(cfg, 2, cfg.seed.wrapping_add(1_000_003))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(7);
    let mut model = NodeModel::init(STATE_DIM, CONTROL_DIM, &cfg.model_hidden, cfg.env.integrator(), &mut rng)?;
    model.fit_scaling(&all_windows(&train, 1)?)?;
    let mut trainer = NodeTrainer::new(cfg.model_optimizer, cfg.lr_model, cfg.model_loss);
    let mut losses = Vec::new();
    for step in 0..cfg.sysid_steps {
        let Some(batch) = train.sample_windows(&mut rng, cfg.model_batch, cfg.model_horizon)? else {
            break;
        };
        let loss = trainer.step(&mut model, &batch)?;
        if step % 100 == 0 || step + 1 == cfg.sysid_steps {
            losses.push((step, loss));
        }
    }
    let one_step_l1 = model_loss(&model, &all_windows(&test, 1)?)?;
    let two_step_l1 = terminal_l1(&model, &all_windows(&test, 2)?)?;
    Ok((
        model,
        SysidReport {
            steps: cfg.sysid_steps,
            losses,
            one_step_l1,
            two_step_l1,
            seconds: start.elapsed().as_secs_f64(),
        },
    ))
}
