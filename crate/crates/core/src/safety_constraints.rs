//! Discrete-time barrier chains and Lyapunov decrease residuals.
//!
//! For a safety function `h` with relative degree `r` and linear class-K
//! gains `γ_j`, the chain is
//!
//! ```text
//! Φ_0(x_k) = h(x_k)
//! Φ_j(x_k) = Φ_{j-1}(x_{k+1}) − Φ_{j-1}(x_k) + γ_j Φ_{j-1}(x_k)
//! ```
//!
//! and `Φ_r(x_k) ≥ 0` is the per-sample safety condition. Future states are
//! model predictions. Since every step of the recursion is linear, `Φ_r` is
//! a fixed linear combination of `h(x_k), …, h(x_{k+r})`; see
//! [`chain_weights`].
//!
//! Residuals are stored with the sign convention "positive means violated"
//! (`−Φ_r` and the Lyapunov decrease residual), so that aggregation is a mean
//! of ReLUs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::diff_core::GradientRecord;
use crate::error::{Error, Result};
use crate::node_model::{NodeModel, StepTape};

/// A scalar safety function with a known gradient.
pub trait Barrier {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// `h(x) = w · x + offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearBarrier {
    pub weights: Vec<f64>,
    pub offset: f64,
}

impl LinearBarrier {
    /// `h(x) = x[front] − x[back] − min_gap`.
    pub fn gap(dim: usize, front: usize, back: usize, min_gap: f64) -> Self {
        let mut weights = vec![0.0; dim];
        weights[front] = 1.0;
        weights[back] = -1.0;
        Self {
            weights,
            offset: -min_gap,
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| w * alpha).collect(),
            offset: self.offset * alpha,
        }
    }
}

impl Barrier for LinearBarrier {
    fn value(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.offset
    }

    fn gradient(&self, _x: &[f64]) -> Vec<f64> {
        self.weights.clone()
    }
}

impl<F: Fn(&[f64]) -> f64> Barrier for F {
    fn value(&self, x: &[f64]) -> f64 {
        self(x)
    }

    /// Central differences; closures are only used in tests and toy systems.
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let eps = 1e-6;
        let mut p = x.to_vec();
        (0..x.len())
            .map(|j| {
                p[j] = x[j] + eps;
                let hi = self(&p);
                p[j] = x[j] - eps;
                let lo = self(&p);
                p[j] = x[j];
                (hi - lo) / (2.0 * eps)
            })
            .collect()
    }
}

/// One safety constraint: its function and the class-K gains `γ_1..γ_r`.
#[derive(Clone, Debug, PartialEq)]
pub struct CbfSpec<B = LinearBarrier> {
    pub barrier: B,
    pub gains: Vec<f64>,
}

impl<B> CbfSpec<B> {
    pub fn new(barrier: B, gains: Vec<f64>) -> Result<Self> {
        validate_gains(&gains)?;
        Ok(Self { barrier, gains })
    }

    pub fn relative_degree(&self) -> usize {
        self.gains.len()
    }
}

fn validate_gains(gains: &[f64]) -> Result<()> {
    if gains.is_empty() {
        return Err(Error::invalid("relative degree must be at least 1"));
    }
    if let Some(g) = gains.iter().find(|g| !(**g > 0.0 && **g <= 1.0)) {
        return Err(Error::invalid(format!("class-K gain {g} outside (0, 1]")));
    }
    Ok(())
}

/// `Φ_r(x_k)` from the barrier values `h(x_k), …, h(x_{k+r})`.
pub fn chain_value(gains: &[f64], h_values: &[f64]) -> Result<f64> {
    if h_values.len() != gains.len() + 1 {
        return Err(Error::invalid(format!(
            "relative degree {} needs {} barrier values, got {}",
            gains.len(),
            gains.len() + 1,
            h_values.len()
        )));
    }
    let mut phi = h_values.to_vec();
    for &g in gains {
        phi = phi
            .windows(2)
            .map(|w| w[1] - w[0] + g * w[0])
            .collect();
    }
    Ok(phi[0])
}

/// Coefficients `c_k` with `Φ_r(x_0) = Σ_k c_k h(x_k)`.
pub fn chain_weights(gains: &[f64]) -> Vec<f64> {
    let r = gains.len();
    (0..=r)
        .map(|k| {
            let mut unit = vec![0.0; r + 1];
            unit[k] = 1.0;
            chain_value(gains, &unit).expect("length is r + 1")
        })
        .collect()
}

/// `Φ_r` along `predicted = [x_k, x̂_{k+1}, …, x̂_{k+r}]`.
pub fn phi_chain<B: Barrier>(spec: &CbfSpec<B>, predicted: &[&[f64]]) -> Result<f64> {
    if predicted.len() != spec.relative_degree() + 1 {
        return Err(Error::invalid(format!(
            "need {} states for relative degree {}, got {}",
            spec.relative_degree() + 1,
            spec.relative_degree(),
            predicted.len()
        )));
    }
    let h: Vec<f64> = predicted.iter().map(|x| spec.barrier.value(x)).collect();
    chain_value(&spec.gains, &h)
}

/// `L(x̂') − L(x) + β L(x)`; non-positive when the decrease condition holds.
pub fn clf_residual_value(l_x: f64, l_next: f64, beta: f64) -> f64 {
    l_next - l_x + beta * l_x
}

pub fn clf_residual<F: Fn(&[f64]) -> f64>(
    lyapunov: F,
    x: &[f64],
    x_next: &[f64],
    beta: f64,
) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::invalid("beta must be positive"));
    }
    Ok(clf_residual_value(lyapunov(x), lyapunov(x_next), beta))
}

/// Per-sample residuals over a minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintBatch {
    /// `−Φ_{i,r}` with shape `(batch, constraints)`.
    pub cbf_residuals: Array2<f64>,
    /// Lyapunov residuals, one per sample; empty when no stability
    /// constraint is imposed.
    pub clf_residuals: Array1<f64>,
    pub beta: f64,
}

impl ConstraintBatch {
    pub fn len(&self) -> usize {
        self.cbf_residuals.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedConstraints {
    /// Mean of `max(0, −Φ_{i,r})` per constraint.
    pub f: Vec<f64>,
    /// Mean of `max(0, clf_residual)`, zero without a stability constraint.
    pub g: f64,
    /// Signed means, for diagnostics only.
    pub raw_f: Vec<f64>,
    pub raw_g: f64,
}

pub fn aggregate(batch: &ConstraintBatch) -> Result<AggregatedConstraints> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !batch.clf_residuals.is_empty() && batch.clf_residuals.len() != batch.len() {
        return Err(Error::invalid("CBF and CLF residuals have different batch sizes"));
    }
    let relu_mean = |v: ArrayView1<f64>| v.iter().map(|r| r.max(0.0)).sum::<f64>() / v.len() as f64;
    let f = batch
        .cbf_residuals
        .columns()
        .into_iter()
        .map(relu_mean)
        .collect();
    let raw_f = batch
        .cbf_residuals
        .mean_axis(Axis(0))
        .map(|m| m.to_vec())
        .unwrap_or_default();
    let (g, raw_g) = if batch.clf_residuals.is_empty() {
        (0.0, 0.0)
    } else {
        (
            relu_mean(batch.clf_residuals.view()),
            batch.clf_residuals.mean().unwrap_or(0.0),
        )
    };
    Ok(AggregatedConstraints { f, g, raw_f, raw_g })
}

/// A learned cost value function used as the Lyapunov candidate.
pub trait LyapunovCandidate {
    fn values(&self, x: ArrayView2<f64>) -> Array1<f64>;
    /// Values and `∂L/∂x` for each row.
    fn values_and_input_grad(&self, x: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>);
}

/// Builds barrier and Lyapunov residuals from dynamics-model predictions.
///
/// The candidate control is held over the whole prediction horizon, which
/// equals the common relative degree of the barriers.
#[derive(Clone, Debug)]
pub struct ModelConstraints {
    specs: Vec<CbfSpec<LinearBarrier>>,
    beta: f64,
}

/// Residuals together with what is needed to pull a gradient back to the
/// controls.
pub struct ConstraintEvaluation {
    pub batch: ConstraintBatch,
    /// Predicted states `x̂_{k+1}, …, x̂_{k+r}`.
    pub predictions: Vec<Array2<f64>>,
    tapes: Vec<StepTape>,
    weights: Vec<Vec<f64>>,
    lyapunov_grad_next: Option<Array2<f64>>,
}

impl ModelConstraints {
    pub fn new(specs: Vec<CbfSpec<LinearBarrier>>, beta: f64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::invalid("at least one barrier is required"));
        }
        let r = specs[0].relative_degree();
        if specs.iter().any(|s| s.relative_degree() != r) {
            return Err(Error::invalid("all barriers must share one relative degree"));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::invalid(format!("beta {beta} outside (0, 1]")));
        }
        Ok(Self { specs, beta })
    }

    pub fn specs(&self) -> &[CbfSpec<LinearBarrier>] {
        &self.specs
    }

    pub fn num_constraints(&self) -> usize {
        self.specs.len()
    }

    pub fn horizon(&self) -> usize {
        self.specs[0].relative_degree()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Evaluates `−Φ_{i,r}` for every sample and, when a Lyapunov candidate
    /// is given, `L(x̂_{k+1}) − L(x_k) + β L(x_k)`.
    pub fn evaluate<L: LyapunovCandidate>(
        &self,
        model: &NodeModel,
        lyapunov: Option<&L>,
        t: ArrayView1<f64>,
        x: ArrayView2<f64>,
        u: ArrayView2<f64>,
    ) -> Result<ConstraintEvaluation> {
        let b = x.nrows();
        if b == 0 {
            return Err(Error::EmptyBatch);
        }
        let r = self.horizon();
        let dt = model.integrator().interval;
        let mut predictions = Vec::with_capacity(r);
        let mut tapes = Vec::with_capacity(r);
        let mut cur = x.to_owned();
        for k in 0..r {
            let tk = &t + k as f64 * dt;
            let (next, tape) = model.predict_batch_tape(tk.view(), cur.view(), u)?;
            predictions.push(next.clone());
            tapes.push(tape);
            cur = next;
        }

        let weights: Vec<Vec<f64>> = self.specs.iter().map(|s| chain_weights(&s.gains)).collect();
        let mut cbf = Array2::zeros((b, self.specs.len()));
        for row in 0..b {
            let x0 = x.row(row).to_vec();
            for (i, spec) in self.specs.iter().enumerate() {
                let mut phi = weights[i][0] * spec.barrier.value(&x0);
                for k in 1..=r {
                    let xk = predictions[k - 1].row(row);
                    phi += weights[i][k] * spec.barrier.value(xk.as_slice().expect("owned rows are contiguous"));
                }
                cbf[[row, i]] = -phi;
            }
        }

        let (clf, lyapunov_grad_next) = match lyapunov {
            Some(l) => {
                let l_x = l.values(x);
                let (l_next, grad) = l.values_and_input_grad(predictions[0].view());
                let res = l_x
                    .iter()
                    .zip(&l_next)
                    .map(|(&lx, &ln)| clf_residual_value(lx, ln, self.beta))
                    .collect::<Array1<f64>>();
                (res, Some(grad))
            }
            None => (Array1::zeros(0), None),
        };

        Ok(ConstraintEvaluation {
            batch: ConstraintBatch {
                cbf_residuals: cbf,
                clf_residuals: clf,
                beta: self.beta,
            },
            predictions,
            tapes,
            weights,
            lyapunov_grad_next,
        })
    }

    /// Gradient of `Σ_i w_i f̄_i + w_g ḡ` (ReLU-mean aggregates) with respect
    /// to each row's control.
    pub fn control_gradient(
        &self,
        model: &NodeModel,
        eval: &ConstraintEvaluation,
        f_weights: &[f64],
        g_weight: f64,
    ) -> Array2<f64> {
        let b = eval.batch.len();
        let n = model.state_dim();
        let r = self.horizon();
        let inv_b = 1.0 / b as f64;
        // Seeds on the predicted states x̂_{k+1}..x̂_{k+r}.
        let mut seeds: Vec<Array2<f64>> = (0..r).map(|_| Array2::zeros((b, n))).collect();
        for row in 0..b {
            for (i, spec) in self.specs.iter().enumerate() {
                if eval.batch.cbf_residuals[[row, i]] <= 0.0 || f_weights[i] == 0.0 {
                    continue;
                }
                let coef = f_weights[i] * inv_b;
                for k in 1..=r {
                    let xk = eval.predictions[k - 1].row(row);
                    let grad_h = spec.barrier.gradient(xk.as_slice().expect("contiguous"));
                    let w = -eval.weights[i][k] * coef;
                    for (s, gh) in seeds[k - 1].row_mut(row).iter_mut().zip(&grad_h) {
                        *s += w * gh;
                    }
                }
            }
            if let Some(grad_l) = &eval.lyapunov_grad_next {
                if g_weight != 0.0 && eval.batch.clf_residuals[row] > 0.0 {
                    let coef = g_weight * inv_b;
                    seeds[0].row_mut(row).scaled_add(coef, &grad_l.row(row));
                }
            }
        }
        let mut scratch = GradientRecord::zeros_like(model.net());
        let mut u_bar: Option<Array2<f64>> = None;
        let mut x_bar: Option<Array2<f64>> = None;
        for k in (0..r).rev() {
            let mut up = seeds[k].clone();
            if let Some(carry) = &x_bar {
                up += carry;
            }
            let (dx, du) = model.step_backward(&eval.tapes[k], up.view(), &mut scratch);
            u_bar = Some(match u_bar {
                Some(acc) => acc + du,
                None => du,
            });
            x_bar = Some(dx);
        }
        u_bar.expect("horizon is at least 1")
    }
}
