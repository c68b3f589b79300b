use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{TrainConfig, TrainMode};
use super::features::{FeatureLyapunov, ObservationMap};
use super::schedule::{UpdateCounts, UpdateFlags};
use crate::actor_critic::{
    alpha_loss, lyapunov_loss, policy_objective_terms, q_loss, CriticSet, LyapunovNet, Minibatch,
    PolicyNet, ReplayBuffer,
};
use crate::car_env::{pos_index, CONTROL_DIM, STATE_DIM};
use crate::constrained_opt::{
    backup_lagrangian, grow_backup_penalty, grow_primary_penalty, primary_lagrangian,
    update_backup_multipliers, update_primary_multipliers, MultiplierState,
};
use crate::diff_core::{GradientRecord, Optimizer, ScalarOptimizer};
use crate::error::{Error, Result};
use crate::node_model::{NodeModel, NodeTrainer};
use crate::safety_constraints::{aggregate, CbfSpec, LinearBarrier, ModelConstraints};

/// Independent random streams, so that enabling one component never shifts
/// the draws seen by another.
#[derive(Clone, Debug)]
pub struct RngStreams {
    pub init: ChaCha8Rng,
    pub act: ChaCha8Rng,
    pub explore: ChaCha8Rng,
    pub policy_noise: ChaCha8Rng,
    pub target_noise: ChaCha8Rng,
    pub backup_noise: ChaCha8Rng,
    pub model: ChaCha8Rng,
    pub env_seed: u64,
    pub buffer_seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        let mut seeds = stream(0);
        Self {
            env_seed: seeds.random(),
            buffer_seed: seeds.random(),
            init: stream(1),
            act: stream(2),
            explore: stream(3),
            policy_noise: stream(4),
            target_noise: stream(5),
            backup_noise: stream(6),
            model: stream(7),
        }
    }
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Barrier constraints `p₃ − p₄ ≥ δ` and `p₄ − p₅ ≥ δ`.
pub fn car_barriers(cfg: &TrainConfig) -> Result<Vec<CbfSpec<LinearBarrier>>> {
    let delta = cfg.env.delta;
    [(3, 4), (4, 5)]
        .into_iter()
        .map(|(front, back)| {
            CbfSpec::new(
                LinearBarrier::gap(STATE_DIM, pos_index(front), pos_index(back), delta),
                cfg.cbf_gains.clone(),
            )
        })
        .collect()
}

struct Optimizers {
    policy: Optimizer,
    backup: Optimizer,
    q1: Optimizer,
    q2: Optimizer,
    lyapunov: Optimizer,
    alpha_p: ScalarOptimizer,
    alpha_b: ScalarOptimizer,
    model: NodeTrainer,
}

/// Diagnostics of one training step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    pub model_loss: Option<f64>,
    pub q_loss: f64,
    pub lyapunov_loss: f64,
    pub lagrangian: f64,
    pub f_p: Vec<f64>,
    pub g: f64,
}

/// All learned quantities plus their optimizers.
pub struct Agent {
    pub policy: PolicyNet,
    pub backup: PolicyNet,
    pub critics: CriticSet,
    pub model: NodeModel,
    pub log_alpha_p: f64,
    pub log_alpha_b: f64,
    pub multipliers: MultiplierState,
    pub constraints: ModelConstraints,
    pub obs: ObservationMap,
    opt: Optimizers,
    critic_steps: usize,
}

fn check(name: &str, g: &GradientRecord) -> Result<()> {
    if g.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("non-finite gradient in {name}")))
    }
}

impl Agent {
    pub fn new(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let obs = ObservationMap::for_env(&cfg.env);
        let nf = obs.output_dim();
        let policy = PolicyNet::init(nf, CONTROL_DIM, &cfg.hidden, cfg.env.u_max, rng)?;
        let backup = PolicyNet::init(nf, CONTROL_DIM, &cfg.hidden, cfg.env.u_max, rng)?;
        let critics = CriticSet::init(nf, CONTROL_DIM, &cfg.hidden, rng)?;
        let model = NodeModel::init(STATE_DIM, CONTROL_DIM, &cfg.model_hidden, cfg.env.integrator(), rng)?;
        let barriers = car_barriers(cfg)?;
        let multipliers = MultiplierState::new(barriers.len(), cfg.c_init, cfg.rho_c, cfg.c_max)?;
        let constraints = ModelConstraints::new(barriers, cfg.beta)?;
        let k = cfg.optimizer;
        let opt = Optimizers {
            policy: Optimizer::new(k, cfg.lr_policy),
            backup: Optimizer::new(k, cfg.lr_policy),
            q1: Optimizer::new(k, cfg.lr_critic),
            q2: Optimizer::new(k, cfg.lr_critic),
            lyapunov: Optimizer::new(k, cfg.lr_critic),
            alpha_p: ScalarOptimizer::new(k, cfg.lr_policy),
            alpha_b: ScalarOptimizer::new(k, cfg.lr_policy),
            model: NodeTrainer::new(cfg.model_optimizer, cfg.lr_model, cfg.model_loss),
        };
        Ok(Self {
            policy,
            backup,
            critics,
            model,
            log_alpha_p: cfg.init_alpha.ln(),
            log_alpha_b: cfg.init_alpha.ln(),
            multipliers,
            constraints,
            obs,
            opt,
            critic_steps: 0,
        })
    }

    pub fn features(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.obs.apply(x)
    }

    /// Stochastic action of the chosen policy.
    pub fn act(&self, backup: bool, x: &[f64], rng: &mut ChaCha8Rng) -> Result<f64> {
        let z = self.obs.apply_row(x);
        let p = if backup { &self.backup } else { &self.policy };
        Ok(p.sample_action(&z, rng)?.0[0])
    }

    pub fn act_deterministic(&self, backup: bool, x: &[f64]) -> Result<f64> {
        let z = self.obs.apply_row(x);
        let p = if backup { &self.backup } else { &self.policy };
        Ok(p.mean_action(&z)?[0])
    }

    /// One gradient step on the dynamics model from replayed windows.
    pub fn model_step(
        &mut self,
        cfg: &TrainConfig,
        buffer: &ReplayBuffer,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<f64>> {
        match buffer.sample_windows(rng, cfg.model_batch, cfg.model_horizon)? {
            Some(batch) => Ok(Some(self.opt.model.step(&mut self.model, &batch)?)),
            None => Ok(None),
        }
    }

    /// Runs every update due at this step, in the fixed order: dynamics
    /// model, critics, primary policy and its entropy coefficient, penalty
    /// growth, primary multipliers, backup policy, backup multipliers.
    pub fn update(
        &mut self,
        cfg: &TrainConfig,
        flags: UpdateFlags,
        buffer: &mut ReplayBuffer,
        rngs: &mut RngStreams,
        counts: &mut UpdateCounts,
    ) -> Result<StepStats> {
        let mut stats = StepStats::default();
        let constrained = cfg.mode != TrainMode::Sac;
        if flags.model && constrained {
            stats.model_loss = self.model_step(cfg, buffer, &mut rngs.model)?;
            counts.model += 1;
        }

        let raw = buffer.sample(cfg.batch_size)?;
        let feat = Minibatch {
            states: self.features(raw.states.view()),
            next_states: self.features(raw.next_states.view()),
            ..raw.clone()
        };
        // Constraints use the Lyapunov network as it was before this step's
        // critic update.
        let lyapunov_snapshot: Option<LyapunovNet> = constrained.then(|| self.critics.lyapunov.clone());

        self.critic_step(cfg, &feat, &mut rngs.target_noise, &mut stats)?;
        counts.critic += 1;

        let noise = gaussian(&mut rngs.policy_noise, raw.len(), CONTROL_DIM);
        let obs = self.obs.clone();
        let lyap = lyapunov_snapshot.as_ref().map(|net| FeatureLyapunov { net, map: &obs });
        self.primary_step(cfg, &raw, &feat, noise.view(), lyap.as_ref(), &mut stats)?;
        counts.policy += 1;
        grow_primary_penalty(&mut self.multipliers);

        if flags.multipliers && constrained {
            let (f, g) = self.primary_values(cfg, &raw, &feat, noise.view(), lyap.as_ref())?;
            update_primary_multipliers(&mut self.multipliers, &f, g)?;
            counts.multipliers += 1;
        }

        if flags.backup && cfg.use_backup && constrained {
            let noise_b = gaussian(&mut rngs.backup_noise, raw.len(), CONTROL_DIM);
            self.backup_step(cfg, &raw, &feat, noise_b.view())?;
            grow_backup_penalty(&mut self.multipliers);
            counts.backup += 1;
            if flags.backup_multipliers {
                let f = self.backup_values(cfg, &raw, &feat, noise_b.view())?;
                update_backup_multipliers(&mut self.multipliers, &f)?;
                counts.backup_multipliers += 1;
            }
        }
        Ok(stats)
    }

    fn critic_step(
        &mut self,
        cfg: &TrainConfig,
        feat: &Minibatch,
        rng: &mut ChaCha8Rng,
        stats: &mut StepStats,
    ) -> Result<()> {
        let next_noise = gaussian(rng, feat.len(), CONTROL_DIM);
        let alpha = self.log_alpha_p.exp();
        let l_grad = lyapunov_loss(&self.critics, feat, cfg.gamma_c)?;
        let q = q_loss(&self.critics, &self.policy, alpha, feat, cfg.gamma, next_noise.view())?;
        check("lyapunov", &l_grad)?;
        check("q1", &q.grad1)?;
        check("q2", &q.grad2)?;
        self.opt.lyapunov.step(&mut self.critics.lyapunov.net, &l_grad);
        self.opt.q1.step(&mut self.critics.q1.net, &q.grad1);
        self.opt.q2.step(&mut self.critics.q2.net, &q.grad2);
        self.critic_steps += 1;
        self.critics.target_update(cfg.target_update, self.critic_steps);
        stats.q_loss = 0.5 * (q.loss1 + q.loss2);
        stats.lyapunov_loss = l_grad.loss;
        Ok(())
    }

    /// Aggregated `(f, g)` of the primary policy for the given noise.
    fn primary_values(
        &self,
        cfg: &TrainConfig,
        raw: &Minibatch,
        feat: &Minibatch,
        noise: ArrayView2<f64>,
        lyap: Option<&FeatureLyapunov<'_>>,
    ) -> Result<(Vec<f64>, f64)> {
        let m = self.constraints.num_constraints();
        if cfg.mode != TrainMode::Nlbac {
            return Ok((vec![0.0; m], 0.0));
        }
        let sample = self.policy.sample_batch(feat.states.view(), noise)?;
        let eval = self
            .constraints
            .evaluate(&self.model, lyap, raw.t.view(), raw.states.view(), sample.actions.view())?;
        let agg = aggregate(&eval.batch)?;
        Ok((agg.f, agg.g))
    }

    fn backup_values(
        &self,
        cfg: &TrainConfig,
        raw: &Minibatch,
        feat: &Minibatch,
        noise: ArrayView2<f64>,
    ) -> Result<Vec<f64>> {
        let m = self.constraints.num_constraints();
        if cfg.mode != TrainMode::Nlbac {
            return Ok(vec![0.0; m]);
        }
        let sample = self.backup.sample_batch(feat.states.view(), noise)?;
        let eval = self.constraints.evaluate::<FeatureLyapunov>(
            &self.model,
            None,
            raw.t.view(),
            raw.states.view(),
            sample.actions.view(),
        )?;
        Ok(aggregate(&eval.batch)?.f)
    }

    fn primary_step(
        &mut self,
        cfg: &TrainConfig,
        raw: &Minibatch,
        feat: &Minibatch,
        noise: ArrayView2<f64>,
        lyap: Option<&FeatureLyapunov<'_>>,
        stats: &mut StepStats,
    ) -> Result<()> {
        let alpha = self.log_alpha_p.exp();
        let mut obj = policy_objective_terms(&self.policy, &self.critics, alpha, feat.states.view(), noise)?;
        if cfg.mode == TrainMode::Sac {
            stats.lagrangian = obj.value;
        } else {
            let m = self.constraints.num_constraints();
            let eval = self.constraints.evaluate(
                &self.model,
                lyap,
                raw.t.view(),
                raw.states.view(),
                obj.sample.actions.view(),
            )?;
            let (f, g) = match cfg.mode {
                TrainMode::Nlbac => {
                    let agg = aggregate(&eval.batch)?;
                    (agg.f, agg.g)
                }
                _ => (vec![0.0; m], 0.0),
            };
            let terms = primary_lagrangian(obj.value, &f, g, &self.multipliers)?;
            if terms.f_weights.iter().any(|&w| w != 0.0) || terms.g_weight != 0.0 {
                let du = self
                    .constraints
                    .control_gradient(&self.model, &eval, &terms.f_weights, terms.g_weight);
                obj.d_action += &du;
            }
            stats.lagrangian = terms.value;
            stats.f_p = f;
            stats.g = g;
        }
        let grad = self
            .policy
            .backward(&obj.sample, obj.d_action.view(), obj.d_log_prob.view())?;
        check("policy", &grad)?;
        self.opt.policy.step(self.policy.net_mut(), &grad);
        let (_, d_log_alpha) = alpha_loss(self.log_alpha_p, obj.sample.log_probs.view(), cfg.target_entropy)?;
        self.opt.alpha_p.step(&mut self.log_alpha_p, d_log_alpha);
        Ok(())
    }

    fn backup_step(
        &mut self,
        cfg: &TrainConfig,
        raw: &Minibatch,
        feat: &Minibatch,
        noise: ArrayView2<f64>,
    ) -> Result<()> {
        let alpha = self.log_alpha_b.exp();
        let mut obj = policy_objective_terms(&self.backup, &self.critics, alpha, feat.states.view(), noise)?;
        let eval = self.constraints.evaluate::<FeatureLyapunov>(
            &self.model,
            None,
            raw.t.view(),
            raw.states.view(),
            obj.sample.actions.view(),
        )?;
        let f = match cfg.mode {
            TrainMode::Nlbac => aggregate(&eval.batch)?.f,
            _ => vec![0.0; self.constraints.num_constraints()],
        };
        let terms = backup_lagrangian(obj.value, &f, &self.multipliers)?;
        if terms.f_weights.iter().any(|&w| w != 0.0) {
            let du = self.constraints.control_gradient(&self.model, &eval, &terms.f_weights, 0.0);
            obj.d_action += &du;
        }
        let grad = self
            .backup
            .backward(&obj.sample, obj.d_action.view(), obj.d_log_prob.view())?;
        check("backup policy", &grad)?;
        self.opt.backup.step(self.backup.net_mut(), &grad);
        let (_, d_log_alpha) = alpha_loss(self.log_alpha_b, obj.sample.log_probs.view(), cfg.target_entropy)?;
        self.opt.alpha_b.step(&mut self.log_alpha_b, d_log_alpha);
        Ok(())
    }
}
