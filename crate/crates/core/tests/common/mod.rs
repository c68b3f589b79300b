//! Oracles shared by the integration suites and the acceptance run.
#![allow(dead_code)]

use std::time::Instant;

use ndarray::{array, Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nlbac::actor_critic::{
    alpha_loss, lyapunov_loss, policy_objective, policy_objective_terms, q_loss, CriticSet,
    LyapunovNet, Minibatch, PolicyNet, QNet,
};
use nlbac::constrained_opt::{backup_lagrangian, primary_lagrangian, MultiplierState};
use nlbac::diff_core::{
    integrate, integrate_backward, integrate_tape, Activation, GradientRecord, IntegratorConfig,
    MlpParams, Scheme, VectorField,
};
use nlbac::node_model::{model_loss_grad, model_loss_with, ModelLossKind, NodeModel, TrajectoryBatch};
use nlbac::safety_constraints::{aggregate, CbfSpec, LinearBarrier, ModelConstraints};

pub const FD_STEP: f64 = 1e-6;

/// Relative error used by every gradient check. Pairs whose magnitudes are
/// both below `1e-7` are compared absolutely, since finite differences
/// cannot resolve relative error there.
pub fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-7 {
        (a - n).abs()
    } else {
        (a - n).abs() / scale
    }
}

/// Largest relative error between `analytic` and central differences of `f`
/// over every coordinate of `x0`.
pub fn fd_vector(x0: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(x0.len(), analytic.len());
    let mut x = x0.to_vec();
    let mut worst: f64 = 0.0;
    for j in 0..x.len() {
        x[j] = x0[j] + FD_STEP;
        let hi = f(&x);
        x[j] = x0[j] - FD_STEP;
        let lo = f(&x);
        x[j] = x0[j];
        worst = worst.max(rel_err(analytic[j], (hi - lo) / (2.0 * FD_STEP)));
    }
    worst
}

/// FD check of a parameter gradient: `f` receives the perturbed network.
pub fn fd_params(net: &MlpParams, grad: &GradientRecord, mut f: impl FnMut(&MlpParams) -> f64) -> f64 {
    let flat = net.to_flat();
    let mut probe = net.clone();
    fd_vector(&flat, &grad.to_flat(), |p| {
        probe.set_flat(p).unwrap();
        f(&probe)
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

pub fn standard_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(rand_distr::StandardNormal))
}

fn tanh_net(sizes: &[usize], rng: &mut ChaCha8Rng) -> MlpParams {
    MlpParams::init_uniform(sizes, Activation::Tanh, rng).unwrap()
}

/// Smooth (tanh) critics so that finite differences are well defined.
pub fn smooth_critics(state_dim: usize, control_dim: usize, rng: &mut ChaCha8Rng) -> CriticSet {
    let q = |rng: &mut ChaCha8Rng| QNet::new(tanh_net(&[state_dim + control_dim, 8, 8, 1], rng), state_dim).unwrap();
    let l = |rng: &mut ChaCha8Rng| LyapunovNet::new(tanh_net(&[state_dim, 8, 1], rng)).unwrap();
    CriticSet {
        q1: q(rng),
        q2: q(rng),
        q1_targ: q(rng),
        q2_targ: q(rng),
        lyapunov: l(rng),
        lyapunov_targ: l(rng),
    }
}

pub fn smooth_policy(state_dim: usize, control_dim: usize, bound: f64, rng: &mut ChaCha8Rng) -> PolicyNet {
    PolicyNet::new(tanh_net(&[state_dim, 8, 2 * control_dim], rng), bound).unwrap()
}

pub fn random_minibatch(rng: &mut ChaCha8Rng, b: usize, n: usize, m: usize) -> Minibatch {
    Minibatch {
        t: Array1::from_shape_simple_fn(b, || rng.random_range(0.0..5.0)),
        states: random_matrix(rng, b, n, 1.0),
        controls: random_matrix(rng, b, m, 1.0),
        rewards: Array1::from_shape_simple_fn(b, || rng.random_range(-1.0..1.0)),
        costs: Array1::from_shape_simple_fn(b, || rng.random_range(0.0..1.0)),
        next_states: random_matrix(rng, b, n, 1.0),
        done: Array1::from_shape_simple_fn(b, || if rng.random_bool(0.2) { 1.0 } else { 0.0 }),
    }
}

/// Outcome of one named check.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub error: f64,
}

pub fn grad_mlp() -> Check {
    let mut r = rng(1);
    let net = tanh_net(&[3, 16, 16, 2], &mut r);
    let x = random_matrix(&mut r, 5, 3, 1.0);
    let up = random_matrix(&mut r, 5, 2, 1.0);
    let (_, tape) = net.forward_tape(x.view()).unwrap();
    let (grad, dx) = net.backward(&tape, up.view()).unwrap();
    let objective = |n: &MlpParams, x: ArrayView2<f64>| (n.forward_batch(x).unwrap() * &up).sum();
    let e_params = fd_params(&net, &grad, |n| objective(n, x.view()));
    let e_input = fd_vector(x.as_slice().unwrap(), dx.as_slice().unwrap(), |p| {
        objective(&net, ArrayView2::from_shape((5, 3), p).unwrap())
    });
    Check {
        name: "mlp_backward",
        error: e_params.max(e_input),
    }
}

fn small_node(scheme: Scheme, substeps: usize, seed: u64) -> NodeModel {
    let mut r = rng(seed);
    let cfg = IntegratorConfig::new(scheme, substeps, 0.1).unwrap();
    NodeModel::init(3, 1, &[12], cfg, &mut r).unwrap()
}

pub fn grad_integrate() -> Check {
    let mut worst: f64 = 0.0;
    for (scheme, substeps) in [(Scheme::Rk4, 2), (Scheme::Euler, 3)] {
        let model = small_node(scheme, substeps, 2);
        let mut r = rng(3);
        let t = Array1::from_vec(vec![0.3, 1.1, 2.0, 0.0]);
        let x = random_matrix(&mut r, 4, 3, 1.0);
        let u = random_matrix(&mut r, 4, 1, 1.0);
        let w = random_matrix(&mut r, 4, 3, 1.0);
        let (_, tape) = model.predict_batch_tape(t.view(), x.view(), u.view()).unwrap();
        let mut grad = GradientRecord::zeros_like(model.net());
        let (dx, du) = model.step_backward(&tape, w.view(), &mut grad);
        let score = |m: &NodeModel, x: ArrayView2<f64>, u: ArrayView2<f64>| {
            (m.predict_batch(t.view(), x, u).unwrap() * &w).sum()
        };
        let mut probe = model.clone();
        let e_params = fd_vector(&model.net().to_flat(), &grad.to_flat(), |p| {
            probe.net_mut().set_flat(p).unwrap();
            score(&probe, x.view(), u.view())
        });
        let e_x = fd_vector(x.as_slice().unwrap(), dx.as_slice().unwrap(), |p| {
            score(&model, ArrayView2::from_shape((4, 3), p).unwrap(), u.view())
        });
        let e_u = fd_vector(u.as_slice().unwrap(), du.as_slice().unwrap(), |p| {
            score(&model, x.view(), ArrayView2::from_shape((4, 1), p).unwrap())
        });
        worst = worst.max(e_params).max(e_x).max(e_u);
    }

    // Multi-step model loss on a two-step window.
    let model = small_node(Scheme::Rk4, 1, 4);
    let mut r = rng(5);
    let batch = TrajectoryBatch::new(
        Array1::from_vec(vec![0.0, 0.5, 1.0]),
        (0..3).map(|_| random_matrix(&mut r, 3, 3, 1.0)).collect(),
        (0..2).map(|_| random_matrix(&mut r, 3, 1, 1.0)).collect(),
    )
    .unwrap();
    let grad = model_loss_grad(&model, &batch, ModelLossKind::Squared).unwrap();
    let mut probe = model.clone();
    let e_loss = fd_vector(&model.net().to_flat(), &grad.to_flat(), |p| {
        probe.net_mut().set_flat(p).unwrap();
        model_loss_with(&probe, &batch, ModelLossKind::Squared).unwrap()
    });
    Check {
        name: "integrate",
        error: worst.max(e_loss),
    }
}

pub fn grad_q_loss() -> Check {
    let mut r = rng(6);
    let critics = smooth_critics(3, 1, &mut r);
    let policy = smooth_policy(3, 1, 2.0, &mut r);
    let batch = random_minibatch(&mut r, 6, 3, 1);
    let noise = standard_normal(&mut r, 6, 1);
    let q = q_loss(&critics, &policy, 0.3, &batch, 0.9, noise.view()).unwrap();
    let mut probe = critics.clone();
    let e1 = fd_params(&critics.q1.net, &q.grad1, |n| {
        probe.q1.net = n.clone();
        q_loss(&probe, &policy, 0.3, &batch, 0.9, noise.view()).unwrap().loss1
    });
    let mut probe = critics.clone();
    let e2 = fd_params(&critics.q2.net, &q.grad2, |n| {
        probe.q2.net = n.clone();
        q_loss(&probe, &policy, 0.3, &batch, 0.9, noise.view()).unwrap().loss2
    });
    Check {
        name: "q_loss",
        error: e1.max(e2),
    }
}

pub fn grad_lyapunov_loss() -> Check {
    let mut r = rng(7);
    let critics = smooth_critics(3, 1, &mut r);
    let batch = random_minibatch(&mut r, 6, 3, 1);
    let grad = lyapunov_loss(&critics, &batch, 0.95).unwrap();
    let mut probe = critics.clone();
    let e = fd_params(&critics.lyapunov.net, &grad, |n| {
        probe.lyapunov.net = n.clone();
        lyapunov_loss(&probe, &batch, 0.95).unwrap().loss
    });
    Check {
        name: "lyapunov_loss",
        error: e,
    }
}

pub fn grad_alpha_loss() -> Check {
    let log_probs = array![-1.3, 0.2, -0.7, 0.9];
    let mut worst: f64 = 0.0;
    for log_alpha in [-2.0, -0.4, 0.0, 0.8] {
        let (_, d) = alpha_loss(log_alpha, log_probs.view(), -1.0).unwrap();
        let e = fd_vector(&[log_alpha], &[d], |p| alpha_loss(p[0], log_probs.view(), -1.0).unwrap().0);
        worst = worst.max(e);
    }
    Check {
        name: "alpha_loss",
        error: worst,
    }
}

pub fn grad_policy_objective() -> Check {
    let mut r = rng(8);
    let critics = smooth_critics(3, 1, &mut r);
    let policy = smooth_policy(3, 1, 2.0, &mut r);
    let states = random_matrix(&mut r, 6, 3, 1.0);
    let noise = standard_normal(&mut r, 6, 1);
    let (_, grad) = policy_objective(&policy, &critics, 0.2, states.view(), noise.view()).unwrap();
    let mut probe = policy.clone();
    let e = fd_params(policy.net(), &grad, |n| {
        *probe.net_mut() = n.clone();
        policy_objective(&probe, &critics, 0.2, states.view(), noise.view()).unwrap().0
    });
    Check {
        name: "policy_objective",
        error: e,
    }
}

/// Two-car toy used by the Lagrangian checks: state `(p1, v1, p2, v2)`,
/// barrier `p1 − p2 ≥ min_gap`, relative degree two.
struct LagrangianFixture {
    model: NodeModel,
    constraints: ModelConstraints,
    policy: PolicyNet,
    critics: CriticSet,
    t: Array1<f64>,
    states: Array2<f64>,
    noise: Array2<f64>,
    ms: MultiplierState,
}

fn lagrangian_fixture() -> LagrangianFixture {
    let mut r = rng(9);
    let cfg = IntegratorConfig::new(Scheme::Rk4, 1, 0.2).unwrap();
    let model = NodeModel::init(4, 1, &[10], cfg, &mut r).unwrap();
    let specs = vec![
        CbfSpec::new(LinearBarrier::gap(4, 0, 2, 1.0), vec![0.3, 0.5]).unwrap(),
        CbfSpec::new(LinearBarrier::gap(4, 1, 3, -0.5), vec![0.4, 0.2]).unwrap(),
    ];
    let constraints = ModelConstraints::new(specs, 0.1).unwrap();
    let policy = smooth_policy(4, 1, 3.0, &mut r);
    let critics = smooth_critics(4, 1, &mut r);
    let mut states = random_matrix(&mut r, 8, 4, 1.0);
    for mut row in states.rows_mut() {
        row[0] += 1.0;
    }
    let noise = standard_normal(&mut r, 8, 1);
    let mut ms = MultiplierState::new(2, 2.5, 1.01, 100.0).unwrap();
    ms.lambda_p = vec![0.7, 0.4];
    ms.zeta = 0.9;
    ms.lambda_b = vec![0.5, 1.2];
    LagrangianFixture {
        model,
        constraints,
        policy,
        critics,
        t: Array1::linspace(0.0, 1.4, 8),
        states,
        noise,
        ms,
    }
}

/// Value and policy gradient of the primary (`backup = false`) or backup
/// Lagrangian, routed through the dynamics-model predictions.
fn lagrangian_and_grad(fx: &LagrangianFixture, policy: &PolicyNet, backup: bool) -> (f64, GradientRecord, usize) {
    let mut obj = policy_objective_terms(policy, &fx.critics, 0.2, fx.states.view(), fx.noise.view()).unwrap();
    let lyap = (!backup).then_some(&fx.critics.lyapunov);
    let eval = fx
        .constraints
        .evaluate(&fx.model, lyap, fx.t.view(), fx.states.view(), obj.sample.actions.view())
        .unwrap();
    let agg = aggregate(&eval.batch).unwrap();
    let terms = if backup {
        backup_lagrangian(obj.value, &agg.f, &fx.ms).unwrap()
    } else {
        primary_lagrangian(obj.value, &agg.f, agg.g, &fx.ms).unwrap()
    };
    let du = fx
        .constraints
        .control_gradient(&fx.model, &eval, &terms.f_weights, terms.g_weight);
    obj.d_action += &du;
    let grad = policy
        .backward(&obj.sample, obj.d_action.view(), obj.d_log_prob.view())
        .unwrap();
    let active = eval.batch.cbf_residuals.iter().filter(|r| **r > 0.0).count()
        + eval.batch.clf_residuals.iter().filter(|r| **r > 0.0).count();
    (terms.value, grad, active)
}

fn grad_lagrangian(backup: bool) -> Check {
    let fx = lagrangian_fixture();
    let (_, grad, active) = lagrangian_and_grad(&fx, &fx.policy, backup);
    assert!(active > 0, "fixture must activate at least one constraint");
    let mut probe = fx.policy.clone();
    let e = fd_params(fx.policy.net(), &grad, |n| {
        *probe.net_mut() = n.clone();
        lagrangian_and_grad(&fx, &probe, backup).0
    });
    Check {
        name: if backup { "backup_lagrangian" } else { "primary_lagrangian" },
        error: e,
    }
}

pub fn grad_primary_lagrangian() -> Check {
    grad_lagrangian(false)
}

pub fn grad_backup_lagrangian() -> Check {
    grad_lagrangian(true)
}

pub fn gradient_suite() -> Vec<Check> {
    vec![
        grad_mlp(),
        grad_integrate(),
        grad_q_loss(),
        grad_lyapunov_loss(),
        grad_alpha_loss(),
        grad_policy_objective(),
        grad_primary_lagrangian(),
        grad_backup_lagrangian(),
    ]
}

/// `ẋ = A x` with a damped rotation `A = [[−a, −w], [w, −a]]`.
pub struct DampedRotation {
    pub a: f64,
    pub w: f64,
}

impl DampedRotation {
    /// Closed-form `exp(A t) x0`.
    pub fn exact(&self, t: f64, x0: [f64; 2]) -> [f64; 2] {
        let decay = (-self.a * t).exp();
        let (s, c) = (self.w * t).sin_cos();
        [decay * (c * x0[0] - s * x0[1]), decay * (s * x0[0] + c * x0[1])]
    }
}

impl VectorField for DampedRotation {
    type Tape = ();
    type Grad = ();

    fn eval(&self, _t: ArrayView1<f64>, x: ArrayView2<f64>, _u: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for (mut o, xi) in out.rows_mut().into_iter().zip(x.rows()) {
            o[0] = -self.a * xi[0] - self.w * xi[1];
            o[1] = self.w * xi[0] - self.a * xi[1];
        }
        out
    }

    fn eval_tape(&self, t: ArrayView1<f64>, x: ArrayView2<f64>, u: ArrayView2<f64>) -> (Array2<f64>, ()) {
        (self.eval(t, x, u), ())
    }

    fn zero_grad(&self) {}

    fn vjp(&self, _tape: &(), up: ArrayView2<f64>, _grad: &mut ()) -> (Array2<f64>, Array2<f64>) {
        let mut dx = Array2::zeros(up.raw_dim());
        for (mut d, g) in dx.rows_mut().into_iter().zip(up.rows()) {
            d[0] = -self.a * g[0] + self.w * g[1];
            d[1] = -self.w * g[0] - self.a * g[1];
        }
        (dx, Array2::zeros((up.nrows(), 1)))
    }
}

/// Least-squares slope of `log(error)` against `log(step)` for RK4 on the
/// damped rotation over one unit of time.
pub fn rk4_convergence_slope() -> (f64, Vec<(f64, f64)>) {
    let field = DampedRotation { a: 0.5, w: 2.0 };
    let x0 = [1.0, -0.5];
    let exact = field.exact(1.0, x0);
    let t = Array1::zeros(1);
    let x = Array2::from_shape_vec((1, 2), x0.to_vec()).unwrap();
    let u = Array2::zeros((1, 1));
    let points: Vec<(f64, f64)> = [4usize, 8, 16, 32, 64]
        .iter()
        .map(|&n| {
            let cfg = IntegratorConfig::new(Scheme::Rk4, n, 1.0).unwrap();
            let end = integrate(&field, t.view(), x.view(), u.view(), &cfg).unwrap();
            let err = ((end[[0, 0]] - exact[0]).powi(2) + (end[[0, 1]] - exact[1]).powi(2)).sqrt();
            (1.0 / n as f64, err)
        })
        .collect();
    let logs: Vec<(f64, f64)> = points.iter().map(|(h, e)| (h.ln(), e.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    (sxy / sxx, points)
}

/// The tape-based reverse pass of the linear field agrees with the
/// transpose of the exact propagator derivative.
pub fn linear_adjoint_error() -> f64 {
    let field = DampedRotation { a: 0.3, w: 1.5 };
    let cfg = IntegratorConfig::new(Scheme::Rk4, 4, 0.5).unwrap();
    let t = Array1::zeros(1);
    let x = array![[0.4, -1.2]];
    let u = Array2::zeros((1, 1));
    let up = array![[0.7, 0.2]];
    let (_, tape) = integrate_tape(&field, t.view(), x.view(), u.view(), &cfg).unwrap();
    let (dx, _) = integrate_backward(&field, &tape, up.view(), &mut ());
    fd_vector(x.as_slice().unwrap(), dx.as_slice().unwrap(), |p| {
        let xv = ArrayView2::from_shape((1, 2), p).unwrap();
        (integrate(&field, t.view(), xv, u.view(), &cfg).unwrap() * &up).sum()
    })
}

/// Summary of the brute-force barrier-invariance search.
#[derive(Clone, Copy, Debug, Default)]
pub struct CbfOracleReport {
    pub initial_states: usize,
    pub feasible_sequences: u64,
    pub pruned_branches: u64,
    pub counterexamples: u64,
    /// Sequences that violate `h ≥ 0` when the constraint is ignored; shows
    /// the search is not vacuous.
    pub unconstrained_violations: u64,
}

pub const ORACLE_DT: f64 = 0.1;
pub const ORACLE_HORIZON: usize = 6;
pub const ORACLE_GAINS: [f64; 2] = [0.3, 0.4];

/// Euler double integrator `p' = p + v dt`, `v' = v + u dt` expressed as a
/// dynamics model with a single linear layer on `(t, p, v, u)`.
pub fn double_integrator_model() -> NodeModel {
    let w = array![[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
    let net = MlpParams::from_layers(vec![w], vec![Array1::zeros(2)], Activation::Identity).unwrap();
    let cfg = IntegratorConfig::new(Scheme::Euler, 1, ORACLE_DT).unwrap();
    NodeModel::new(net, cfg, 2, 1).unwrap()
}

fn euler_step(x: [f64; 2], u: f64) -> [f64; 2] {
    [x[0] + ORACLE_DT * x[1], x[1] + ORACLE_DT * u]
}

/// Enumerates every control sequence on an 11-value grid over
/// [`ORACLE_HORIZON`] steps, keeping only those whose `Φ₂` (computed by the
/// library from model predictions) stays non-negative, and checks `h = p`
/// along every surviving trajectory, including the position that the last
/// control already determines. The search runs level by level so each
/// level is a single batched constraint evaluation.
pub fn cbf_invariance_oracle() -> CbfOracleReport {
    let model = double_integrator_model();
    let spec = CbfSpec::new(
        LinearBarrier {
            weights: vec![1.0, 0.0],
            offset: 0.0,
        },
        ORACLE_GAINS.to_vec(),
    )
    .unwrap();
    let constraints = ModelConstraints::new(vec![spec], 0.5).unwrap();
    let grid: Vec<f64> = (0..11).map(|i| -1.0 + 0.2 * i as f64).collect();
    let g = grid.len();
    let mut report = CbfOracleReport::default();
    let [g1, _] = ORACLE_GAINS;
    const TOL: f64 = 1e-12;

    for &p in &[0.0, 0.05, 0.2, 0.6] {
        for &v in &[-0.6, -0.3, 0.0, 0.4] {
            let x0 = [p, v];
            let h1 = euler_step(x0, 0.0)[0];
            // Φ₁(x₀) ≥ 0 is the second invariance precondition.
            if p < 0.0 || h1 - p + g1 * p < 0.0 {
                continue;
            }
            report.initial_states += 1;

            let mut frontier = vec![x0];
            for k in 0..ORACLE_HORIZON {
                if frontier.is_empty() {
                    break;
                }
                let n = frontier.len() * g;
                let t = Array1::from_elem(n, k as f64 * ORACLE_DT);
                let xs = Array2::from_shape_fn((n, 2), |(r, j)| frontier[r / g][j]);
                let us = Array2::from_shape_fn((n, 1), |(r, _)| grid[r % g]);
                let eval = constraints
                    .evaluate::<LyapunovNet>(&model, None, t.view(), xs.view(), us.view())
                    .unwrap();
                let mut next = Vec::with_capacity(n);
                for (r, res) in eval.batch.cbf_residuals.column(0).iter().enumerate() {
                    if *res > TOL {
                        report.pruned_branches += 1;
                        continue;
                    }
                    let x = euler_step(frontier[r / g], grid[r % g]);
                    // p_{k+2} is already fixed by x_{k+1}.
                    if x[0] < -TOL || x[0] + ORACLE_DT * x[1] < -TOL {
                        report.counterexamples += 1;
                    } else {
                        next.push(x);
                    }
                }
                frontier = next;
            }
            report.feasible_sequences += frontier.len() as u64;

            let mut frontier = vec![(x0, false)];
            for _ in 0..ORACLE_HORIZON {
                frontier = frontier
                    .iter()
                    .flat_map(|&(x, hit)| {
                        grid.iter().map(move |&u| {
                            let y = euler_step(x, u);
                            (y, hit || y[0] < 0.0)
                        })
                    })
                    .collect();
            }
            report.unconstrained_violations += frontier.iter().filter(|(_, hit)| *hit).count() as u64;
        }
    }
    report
}

pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Writes one acceptance line to stderr, bypassing libtest's capture.
pub fn report_line(id: u32, name: &str, pass: bool, detail: &str) {
    use std::io::Write;
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id} [{verdict}] {name}: {detail}");
}
