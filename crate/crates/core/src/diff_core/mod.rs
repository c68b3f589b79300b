//! Small-network differentiation and fixed-step ODE integration.

mod integrator;
mod mlp;
mod optim;

pub use integrator::{
    integrate, integrate_backward, integrate_tape, IntegrationTape, IntegratorConfig, Scheme,
    VectorField,
};
pub use mlp::{Activation, GradientRecord, MlpParams, MlpTape};
pub use optim::{Optimizer, OptimizerKind, ScalarOptimizer};

/// `log(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
