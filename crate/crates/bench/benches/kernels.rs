use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nlbac::diff_core::{Activation, IntegratorConfig, MlpParams, Scheme};
use nlbac::node_model::NodeModel;
use nlbac::trainer::{TrainConfig, Trainer};

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn mlp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = MlpParams::init_uniform(&[11, 64, 64, 2], Activation::Relu, &mut rng).unwrap();
    let x = random(&mut rng, 128, 11);
    let upstream = Array2::ones((128, 2));

    c.bench_function("mlp_forward_128x[11,64,64,2]", |b| {
        b.iter(|| net.forward_batch(black_box(x.view())).unwrap())
    });
    c.bench_function("mlp_forward_backward_128x[11,64,64,2]", |b| {
        b.iter(|| {
            let (_, tape) = net.forward_tape(black_box(x.view())).unwrap();
            net.backward(&tape, upstream.view()).unwrap()
        })
    });
}

fn rk4(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = IntegratorConfig::new(Scheme::Rk4, 1, 0.02).unwrap();
    let model = NodeModel::init(10, 1, &[64, 64], cfg, &mut rng).unwrap();
    let x = random(&mut rng, 128, 10);
    let u = random(&mut rng, 128, 1);
    let t = Array1::zeros(128);

    c.bench_function("node_rk4_step_128x10", |b| {
        b.iter(|| model.predict_batch(t.view(), black_box(x.view()), u.view()).unwrap())
    });
}

fn training(c: &mut Criterion) {
    // Enough 20-step warm-up episodes to fill one default batch.
    let mut cfg = TrainConfig {
        warmup_episodes: 7,
        model_pretrain_steps: 0,
        ..TrainConfig::default()
    };
    cfg.env.episode_length = 20;
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("episode_20_steps_default_nets", |b| {
        b.iter_batched(
            || {
                let mut t = Trainer::new(cfg.clone()).unwrap();
                t.warmup().unwrap();
                t
            },
            |mut t| t.run_episode().unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, mlp, rk4, training);
criterion_main!(benches);
