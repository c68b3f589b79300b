//! Dynamics-model training against simulator and synthetic oracles.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nlbac::car_env::{CarEnv, EnvConfig, CONTROL_DIM, STATE_DIM};
use nlbac::diff_core::{IntegratorConfig, OptimizerKind, Scheme};
use nlbac::node_model::{model_loss, train_step, ModelLossKind, NodeModel, NodeTrainer, TrajectoryBatch};

/// `h`-step windows from one random-control episode of the car chain.
fn env_windows(horizon: usize, count: usize, seed: u64) -> TrajectoryBatch {
    let cfg = EnvConfig::default();
    let mut env = CarEnv::new(cfg.clone(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = vec![env.reset().0.to_vec()];
    let mut controls = Vec::new();
    for _ in 0..count + horizon {
        let (out, u) = env.step(rng.random_range(-5.0..5.0)).unwrap();
        controls.push(u);
        states.push(out.next_state.0.to_vec());
    }
    let t0 = Array1::from_shape_fn(count, |i| i as f64 * cfg.dt);
    let xs = (0..=horizon)
        .map(|k| Array2::from_shape_fn((count, STATE_DIM), |(i, j)| states[i + k][j]))
        .collect();
    let us = (0..horizon)
        .map(|k| Array2::from_shape_fn((count, CONTROL_DIM), |(i, _)| controls[i + k]))
        .collect();
    TrajectoryBatch::new(t0, xs, us).unwrap()
}

#[test]
fn l1_loss_matches_scripted_rollout() {
    let batch = env_windows(2, 12, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = NodeModel::init(STATE_DIM, CONTROL_DIM, &[16], EnvConfig::default().integrator(), &mut rng).unwrap();
    let mut total = 0.0;
    for i in 0..batch.len() {
        let x0 = batch.states[0].row(i).to_vec();
        let controls: Vec<Vec<f64>> = (0..2).map(|k| vec![batch.controls[k][[i, 0]]]).collect();
        let preds = model.rollout(batch.start_times[i], &x0, &controls).unwrap();
        for (k, p) in preds.iter().enumerate() {
            total += p.iter().zip(batch.states[k + 1].row(i)).map(|(a, b)| (a - b).abs()).sum::<f64>();
        }
    }
    let scripted = total / (2 * batch.len()) as f64;
    let got = model_loss(&model, &batch).unwrap();
    assert!((got - scripted).abs() < 1e-12 * scripted.max(1.0), "{got} vs {scripted}");
}

#[test]
fn small_steps_descend() {
    let batch = env_windows(2, 32, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = NodeModel::init(STATE_DIM, CONTROL_DIM, &[16], EnvConfig::default().integrator(), &mut rng).unwrap();
    let mut prev = f64::INFINITY;
    let mut rises = 0;
    for _ in 0..50 {
        let loss = train_step(&mut model, &batch, 1e-3).unwrap();
        if loss > prev {
            rises += 1;
        }
        prev = loss;
    }
    assert!(rises <= 5, "{rises} non-monotone steps");
}

#[test]
fn learns_a_linear_system() {
    // ẋ = A x + B u with a lightly damped rotation, sampled at 0.1 s.
    let a = [[-0.2, 1.0], [-1.0, -0.2]];
    let b = [0.0, 1.0];
    let dt = 0.1;
    let exact_step = |x: [f64; 2], u: f64| {
        let f = |x: [f64; 2]| {
            [
                a[0][0] * x[0] + a[0][1] * x[1] + b[0] * u,
                a[1][0] * x[0] + a[1][1] * x[1] + b[1] * u,
            ]
        };
        // Fine RK4 as the reference integrator.
        let mut x = x;
        let h = dt / 50.0;
        for _ in 0..50 {
            let k1 = f(x);
            let k2 = f([x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1]]);
            let k3 = f([x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1]]);
            let k4 = f([x[0] + h * k3[0], x[1] + h * k3[1]]);
            for j in 0..2 {
                x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        x
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sample = |rng: &mut ChaCha8Rng, n: usize| {
        let mut x0 = Array2::zeros((n, 2));
        let mut u = Array2::zeros((n, 1));
        let mut x1 = Array2::zeros((n, 2));
        for i in 0..n {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let ui = rng.random_range(-1.0..1.0);
            let y = exact_step(x, ui);
            x0.row_mut(i).assign(&Array1::from_vec(x.to_vec()));
            u[[i, 0]] = ui;
            x1.row_mut(i).assign(&Array1::from_vec(y.to_vec()));
        }
        TrajectoryBatch::new(Array1::zeros(n), vec![x0, x1], vec![u]).unwrap()
    };
    let train = sample(&mut rng, 2000);
    let test = sample(&mut rng, 500);

    let cfg = IntegratorConfig::new(Scheme::Rk4, 1, dt).unwrap();
    let mut model = NodeModel::init(2, 1, &[32, 32], cfg, &mut rng).unwrap();
    model.fit_scaling(&train).unwrap();
    let mut trainer = NodeTrainer::new(OptimizerKind::Adam, 1e-3, ModelLossKind::L1);
    for _ in 0..2000 {
        let idx: Vec<usize> = (0..64).map(|_| rng.random_range(0..train.len())).collect();
        let pick = |a: &Array2<f64>| a.select(ndarray::Axis(0), &idx);
        let mb = TrajectoryBatch::new(
            Array1::zeros(64),
            train.states.iter().map(pick).collect(),
            train.controls.iter().map(pick).collect(),
        )
        .unwrap();
        trainer.step(&mut model, &mb).unwrap();
    }
    let err = model_loss(&model, &test).unwrap();
    let motion = (&test.states[1] - &test.states[0]).mapv(f64::abs).sum() / test.len() as f64;
    assert!(err / motion < 1e-2, "normalized one-step error {}", err / motion);
}
