//! Fixed-step explicit integration with a reverse pass through every stage.
//!
//! The control input is held constant over the whole interval. Gradients are
//! obtained by differentiating the unrolled scheme (discretize, then
//! optimize), which is exact for the discrete map that is actually used.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Rk4,
    Euler,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub substeps: usize,
    /// Length of one integration interval in seconds.
    pub interval: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Rk4,
            substeps: 1,
            interval: 0.02,
        }
    }
}

impl IntegratorConfig {
    pub fn new(scheme: Scheme, substeps: usize, interval: f64) -> Result<Self> {
        let cfg = Self {
            scheme,
            substeps,
            interval,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.interval > 0.0 && self.interval.is_finite()) {
            return Err(Error::config(format!(
                "integration interval must be positive, got {}",
                self.interval
            )));
        }
        if self.substeps == 0 {
            return Err(Error::config("substeps must be at least 1"));
        }
        Ok(())
    }

    pub fn substep_len(&self) -> f64 {
        self.interval / self.substeps as f64
    }
}

/// A batched, differentiable right-hand side `ẋ = f(t, x, u)`.
///
/// Rows of `x` and `u` are independent samples; `t` holds one time per row.
pub trait VectorField {
    type Tape;
    type Grad;

    fn eval(&self, t: ArrayView1<f64>, x: ArrayView2<f64>, u: ArrayView2<f64>) -> Array2<f64>;

    fn eval_tape(
        &self,
        t: ArrayView1<f64>,
        x: ArrayView2<f64>,
        u: ArrayView2<f64>,
    ) -> (Array2<f64>, Self::Tape);

    fn zero_grad(&self) -> Self::Grad;

    /// Pulls `upstream` back through one evaluation. Parameter gradients are
    /// accumulated into `grad`; returns `(∂/∂x, ∂/∂u)`.
    fn vjp(
        &self,
        tape: &Self::Tape,
        upstream: ArrayView2<f64>,
        grad: &mut Self::Grad,
    ) -> (Array2<f64>, Array2<f64>);
}

/// Stage tapes of one integration, consumed by [`integrate_backward`].
pub struct IntegrationTape<T> {
    scheme: Scheme,
    h: f64,
    substeps: Vec<Vec<T>>,
}

fn check_finite(x: &Array2<f64>, substep: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericOverflow { substep })
    }
}

fn check_shapes(t: &ArrayView1<f64>, x: &ArrayView2<f64>, u: &ArrayView2<f64>) -> Result<()> {
    if t.len() != x.nrows() || u.nrows() != x.nrows() {
        return Err(Error::invalid(format!(
            "batch sizes differ: t {}, x {}, u {}",
            t.len(),
            x.nrows(),
            u.nrows()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial state is not finite"));
    }
    Ok(())
}

/// Advances `x0` by one interval with constant control `u`.
pub fn integrate<F: VectorField>(
    field: &F,
    t0: ArrayView1<f64>,
    x0: ArrayView2<f64>,
    u: ArrayView2<f64>,
    cfg: &IntegratorConfig,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    check_shapes(&t0, &x0, &u)?;
    let h = cfg.substep_len();
    let mut x = x0.to_owned();
    let mut t = t0.to_owned();
    for s in 0..cfg.substeps {
        x = match cfg.scheme {
            Scheme::Euler => {
                let k = field.eval(t.view(), x.view(), u);
                x + &(k * h)
            }
            Scheme::Rk4 => {
                let th = &t + 0.5 * h;
                let k1 = field.eval(t.view(), x.view(), u);
                let x2 = &x + &(&k1 * (0.5 * h));
                let k2 = field.eval(th.view(), x2.view(), u);
                let x3 = &x + &(&k2 * (0.5 * h));
                let k3 = field.eval(th.view(), x3.view(), u);
                let x4 = &x + &(&k3 * h);
                let k4 = field.eval((&t + h).view(), x4.view(), u);
                x + &((k1 + &(k2 * 2.0) + &(k3 * 2.0) + &k4) * (h / 6.0))
            }
        };
        check_finite(&x, s)?;
        t += h;
    }
    Ok(x)
}

/// Same as [`integrate`] but records what the reverse pass needs.
pub fn integrate_tape<F: VectorField>(
    field: &F,
    t0: ArrayView1<f64>,
    x0: ArrayView2<f64>,
    u: ArrayView2<f64>,
    cfg: &IntegratorConfig,
) -> Result<(Array2<f64>, IntegrationTape<F::Tape>)> {
    cfg.validate()?;
    check_shapes(&t0, &x0, &u)?;
    let h = cfg.substep_len();
    let mut x = x0.to_owned();
    let mut t: Array1<f64> = t0.to_owned();
    let mut substeps = Vec::with_capacity(cfg.substeps);
    for s in 0..cfg.substeps {
        let mut stages = Vec::with_capacity(4);
        x = match cfg.scheme {
            Scheme::Euler => {
                let (k, tape) = field.eval_tape(t.view(), x.view(), u);
                stages.push(tape);
                x + &(k * h)
            }
            Scheme::Rk4 => {
                let th = &t + 0.5 * h;
                let (k1, t1) = field.eval_tape(t.view(), x.view(), u);
                let x2 = &x + &(&k1 * (0.5 * h));
                let (k2, t2) = field.eval_tape(th.view(), x2.view(), u);
                let x3 = &x + &(&k2 * (0.5 * h));
                let (k3, t3) = field.eval_tape(th.view(), x3.view(), u);
                let x4 = &x + &(&k3 * h);
                let (k4, t4) = field.eval_tape((&t + h).view(), x4.view(), u);
                stages.extend([t1, t2, t3, t4]);
                x + &((k1 + &(k2 * 2.0) + &(k3 * 2.0) + &k4) * (h / 6.0))
            }
        };
        check_finite(&x, s)?;
        substeps.push(stages);
        t += h;
    }
    Ok((
        x,
        IntegrationTape {
            scheme: cfg.scheme,
            h,
            substeps,
        },
    ))
}

/// Reverse pass of [`integrate_tape`]: given `∂ℓ/∂x_end`, returns
/// `(∂ℓ/∂x0, ∂ℓ/∂u)` and accumulates field-parameter gradients into `grad`.
pub fn integrate_backward<F: VectorField>(
    field: &F,
    tape: &IntegrationTape<F::Tape>,
    upstream: ArrayView2<f64>,
    grad: &mut F::Grad,
) -> (Array2<f64>, Array2<f64>) {
    let h = tape.h;
    let mut x_bar = upstream.to_owned();
    let mut u_bar: Option<Array2<f64>> = None;
    let mut add_u = |du: Array2<f64>| match u_bar.as_mut() {
        Some(acc) => *acc += &du,
        None => u_bar = Some(du),
    };
    for stages in tape.substeps.iter().rev() {
        match tape.scheme {
            Scheme::Euler => {
                let (dx, du) = field.vjp(&stages[0], (&x_bar * h).view(), grad);
                x_bar += &dx;
                add_u(du);
            }
            Scheme::Rk4 => {
                let k4_bar = &x_bar * (h / 6.0);
                let mut k3_bar = &x_bar * (h / 3.0);
                let mut k2_bar = &x_bar * (h / 3.0);
                let mut k1_bar = &x_bar * (h / 6.0);

                let (x4_bar, du) = field.vjp(&stages[3], k4_bar.view(), grad);
                add_u(du);
                x_bar += &x4_bar;
                k3_bar.scaled_add(h, &x4_bar);

                let (x3_bar, du) = field.vjp(&stages[2], k3_bar.view(), grad);
                add_u(du);
                x_bar += &x3_bar;
                k2_bar.scaled_add(0.5 * h, &x3_bar);

                let (x2_bar, du) = field.vjp(&stages[1], k2_bar.view(), grad);
                add_u(du);
                x_bar += &x2_bar;
                k1_bar.scaled_add(0.5 * h, &x2_bar);

                let (x1_bar, du) = field.vjp(&stages[0], k1_bar.view(), grad);
                add_u(du);
                x_bar += &x1_bar;
            }
        }
    }
    let u_bar = u_bar.expect("at least one substep");
    (x_bar, u_bar)
}
