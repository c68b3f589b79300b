use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use super::agent::{Agent, RngStreams, StepStats};
use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::log::{EpisodeLog, EpisodeRecord};
use super::schedule::{BackupSwitch, Controller, Schedule, UpdateCounts};
use crate::actor_critic::{ReplayBuffer, Transition};
use crate::car_env::{backup_zone, CarEnv, TrajectoryRow};
use crate::error::{Error, Result};

/// Network names used in checkpoints.
pub const NETWORKS: [&str; 9] = [
    "policy",
    "backup_policy",
    "q1",
    "q2",
    "q1_targ",
    "q2_targ",
    "lyapunov",
    "lyapunov_targ",
    "dynamics",
];

/// Whole-run safety bookkeeping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunStats {
    /// Steps that started inside the backup zone.
    pub zone_steps: u64,
    pub backup_steps: u64,
    pub violations: u64,
    /// False once any multiplier was negative or non-finite after a step.
    pub multipliers_valid: bool,
}

/// Mutable state of one training run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub agent: Agent,
    pub env: CarEnv,
    pub buffer: ReplayBuffer,
    pub rngs: RngStreams,
    pub schedule: Schedule,
    pub counts: UpdateCounts,
    pub stats: RunStats,
    switch: BackupSwitch,
    steps: u64,
    episodes_done: usize,
    /// `(episode, step)` of the last stored transition.
    last_stored: Option<(usize, usize)>,
    warm: bool,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rngs = RngStreams::new(cfg.seed);
        let agent = Agent::new(&cfg, &mut rngs.init)?;
        let env = CarEnv::new(cfg.env.clone(), rngs.env_seed)?;
        let buffer = ReplayBuffer::new(cfg.replay_capacity, rngs.buffer_seed)?;
        Ok(Self {
            schedule: Schedule {
                n_m: cfg.n_m,
                n_l: cfg.n_l,
                n_b: cfg.n_b,
            },
            switch: BackupSwitch::new(if cfg.use_backup { cfg.backup_dwell } else { 0 }),
            cfg,
            agent,
            env,
            buffer,
            rngs,
            counts: UpdateCounts::default(),
            stats: RunStats {
                multipliers_valid: true,
                ..Default::default()
            },
            steps: 0,
            episodes_done: 0,
            last_stored: None,
            warm: false,
        })
    }

    /// Global step counter `N`.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn store(&mut self, episode: usize, step: usize, tr_base: Transition) {
        let continues = self.last_stored == Some((episode, step.wrapping_sub(1))) && step > 0;
        self.buffer.push(Transition { continues, ..tr_base });
        self.last_stored = Some((episode, step));
    }

    /// Collects random-control episodes into the replay buffer, fits the
    /// dynamics-model input scaling, and pre-trains the model.
    pub fn warmup(&mut self) -> Result<()> {
        if self.warm {
            return Ok(());
        }
        let episode_tag = usize::MAX - 1;
        for w in 0..self.cfg.warmup_episodes {
            let mut x = self.env.reset();
            let tag = episode_tag - w;
            while !self.env.done() {
                let k = self.env.step_index();
                let t = self.env.time();
                let noise: f64 = self.rngs.explore.sample(StandardNormal);
                let (out, u) = self.env.step(self.cfg.explore_std * noise)?;
                self.store(
                    tag,
                    k,
                    Transition {
                        t,
                        state: x.0.to_vec(),
                        control: vec![u],
                        reward: out.reward,
                        cost: out.cost,
                        next_state: out.next_state.0.to_vec(),
                        done: false,
                        continues: false,
                    },
                );
                x = out.next_state;
            }
        }
        if self.cfg.mode != super::TrainMode::Sac && !self.buffer.is_empty() {
            let every: Vec<usize> = (0..self.buffer.len()).collect();
            let all = self.buffer.windows_at(&every, 1)?;
            self.agent.model.fit_scaling(&all)?;
            for _ in 0..self.cfg.model_pretrain_steps {
                self.agent.model_step(&self.cfg, &self.buffer, &mut self.rngs.model)?;
            }
        }
        self.warm = true;
        Ok(())
    }

    /// Runs one training episode and returns its record.
    pub fn run_episode(&mut self) -> Result<EpisodeRecord> {
        self.warmup()?;
        let episode = self.episodes_done;
        let mut x = self.env.reset();
        self.switch.reset();
        let mut rec = EpisodeRecord {
            episode,
            cum_reward: 0.0,
            cum_cost: 0.0,
            violations: 0,
            backup_steps: 0,
            lambda1: 0.0,
            lambda2: 0.0,
            zeta: 0.0,
            c_p: 0.0,
            model_loss: 0.0,
        };
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        while !self.env.done() {
            self.steps += 1;
            self.counts.steps += 1;
            let flags = self.schedule.due(self.steps);
            let st: StepStats = self
                .agent
                .update(&self.cfg, flags, &mut self.buffer, &mut self.rngs, &mut self.counts)?;
            if let Some(l) = st.model_loss {
                loss_sum += l;
                loss_n += 1;
            }
            if !self.agent.multipliers.is_valid() {
                self.stats.multipliers_valid = false;
            }

            let k = self.env.step_index();
            let t = self.env.time();
            let in_zone = backup_zone(&x, &self.cfg.env);
            if in_zone {
                self.stats.zone_steps += 1;
            }
            let controller = self.switch.select(in_zone);
            let backup = controller == Controller::Backup;
            let u = self.agent.act(backup, x.as_slice(), &mut self.rngs.act)?;
            let (out, applied) = self.env.step(u)?;
            if backup {
                rec.backup_steps += 1;
                self.stats.backup_steps += 1;
            } else {
                self.store(
                    episode,
                    k,
                    Transition {
                        t,
                        state: x.0.to_vec(),
                        control: vec![applied],
                        reward: out.reward,
                        cost: out.cost,
                        next_state: out.next_state.0.to_vec(),
                        done: false,
                        continues: false,
                    },
                );
            }
            rec.cum_reward += out.reward;
            rec.cum_cost += out.cost;
            if out.violation {
                rec.violations += 1;
                self.stats.violations += 1;
            }
            x = out.next_state;
        }
        let ms = &self.agent.multipliers;
        rec.lambda1 = ms.lambda_p[0];
        rec.lambda2 = ms.lambda_p.get(1).copied().unwrap_or(0.0);
        rec.zeta = ms.zeta;
        rec.c_p = ms.c_p;
        rec.model_loss = if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN };
        self.episodes_done += 1;
        Ok(rec)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let a = &self.agent;
        let mut ck = Checkpoint::new(
            self.episodes_done,
            self.cfg.clone(),
            a.multipliers.clone(),
            a.model.scaling().clone(),
        );
        let nets = [
            a.policy.net(),
            a.backup.net(),
            &a.critics.q1.net,
            &a.critics.q2.net,
            &a.critics.q1_targ.net,
            &a.critics.q2_targ.net,
            &a.critics.lyapunov.net,
            &a.critics.lyapunov_targ.net,
            a.model.net(),
        ];
        for (name, net) in NETWORKS.iter().zip(nets) {
            ck.insert_network(name, net);
        }
        ck.scalars.insert("log_alpha_p".into(), a.log_alpha_p);
        ck.scalars.insert("log_alpha_b".into(), a.log_alpha_b);
        ck.scalars.insert("steps".into(), self.steps as f64);
        ck
    }
}

/// Result of a full training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub records: Vec<EpisodeRecord>,
    pub counts: UpdateCounts,
    pub stats: RunStats,
    pub out_dir: Option<PathBuf>,
}

/// Trains for `cfg.episodes` episodes. With an output directory, writes
/// `config.toml`, `train_log.csv` and `checkpoint.json` there; a failure
/// mid-run leaves `crash_checkpoint.json` beside the flushed log.
pub fn train(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let cfg_path = dir.join("config.toml");
            std::fs::write(&cfg_path, cfg.to_toml_string()).map_err(|e| Error::io(&cfg_path, e))?;
            Some(EpisodeLog::create(&dir.join("train_log.csv"))?)
        }
        None => None,
    };
    let mut records = Vec::with_capacity(cfg.episodes);
    if cfg.episodes == 0 {
        return Ok(TrainOutcome {
            records,
            counts: UpdateCounts::default(),
            stats: RunStats {
                multipliers_valid: true,
                ..Default::default()
            },
            out_dir: out_dir.map(Path::to_path_buf),
        });
    }
    let mut trainer = Trainer::new(cfg.clone())?;
    for _ in 0..cfg.episodes {
        match trainer.run_episode() {
            Ok(rec) => {
                if let Some(log) = log.as_mut() {
                    log.log_episode(&rec)?;
                }
                records.push(rec);
            }
            Err(e) => {
                if let Some(dir) = out_dir {
                    trainer.checkpoint().save(&dir.join("crash_checkpoint.json"))?;
                }
                return Err(e);
            }
        }
    }
    if let Some(dir) = out_dir {
        trainer.checkpoint().save(&dir.join("checkpoint.json"))?;
    }
    Ok(TrainOutcome {
        records,
        counts: trainer.counts,
        stats: trainer.stats,
        out_dir: out_dir.map(Path::to_path_buf),
    })
}

/// One evaluation rollout per episode with deterministic (mean) actions.
pub struct EvalOutcome {
    pub records: Vec<EpisodeRecord>,
    /// Per-step rows of the first episode.
    pub trajectory: Vec<TrajectoryRow>,
}

pub fn evaluate(checkpoint: &Checkpoint, episodes: usize, seed: u64) -> Result<EvalOutcome> {
    let cfg = &checkpoint.config;
    let mut rngs = RngStreams::new(cfg.seed);
    let mut agent = Agent::new(cfg, &mut rngs.init)?;
    agent.policy = crate::actor_critic::PolicyNet::new(checkpoint.network("policy")?, cfg.env.u_max)?;
    agent.backup = crate::actor_critic::PolicyNet::new(checkpoint.network("backup_policy")?, cfg.env.u_max)?;
    let mut env = CarEnv::new(cfg.env.clone(), seed)?;
    let mut switch = BackupSwitch::new(if cfg.use_backup { cfg.backup_dwell } else { 0 });
    let mut records = Vec::with_capacity(episodes);
    let mut trajectory = Vec::new();
    for episode in 0..episodes {
        let mut x = env.reset();
        switch.reset();
        let mut rec = EpisodeRecord {
            episode,
            cum_reward: 0.0,
            cum_cost: 0.0,
            violations: 0,
            backup_steps: 0,
            lambda1: checkpoint.multipliers.lambda_p.first().copied().unwrap_or(0.0),
            lambda2: checkpoint.multipliers.lambda_p.get(1).copied().unwrap_or(0.0),
            zeta: checkpoint.multipliers.zeta,
            c_p: checkpoint.multipliers.c_p,
            model_loss: f64::NAN,
        };
        while !env.done() {
            let t = env.time();
            let backup = switch.select(backup_zone(&x, &cfg.env)) == Controller::Backup;
            let u = agent.act_deterministic(backup, x.as_slice())?;
            let (out, applied) = env.step(u)?;
            if episode == 0 {
                trajectory.push(TrajectoryRow {
                    t,
                    state: x,
                    u: applied,
                    outcome: out,
                    backup,
                });
            }
            rec.cum_reward += out.reward;
            rec.cum_cost += out.cost;
            rec.violations += out.violation as usize;
            rec.backup_steps += backup as usize;
            x = out.next_state;
        }
        records.push(rec);
    }
    Ok(EvalOutcome { records, trajectory })
}
