use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff_core::{sigmoid, softplus, Activation, GradientRecord, MlpParams, MlpTape};
use crate::error::{Error, Result};
use crate::safety_constraints::LyapunovCandidate;

/// `[x | u]` row-wise.
pub fn concat_state_action(x: ArrayView2<f64>, u: ArrayView2<f64>) -> Array2<f64> {
    let n = x.ncols();
    let mut z = Array2::zeros((x.nrows(), n + u.ncols()));
    z.slice_mut(s![.., ..n]).assign(&x);
    z.slice_mut(s![.., n..]).assign(&u);
    z
}

/// Action-value network `Q(x, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QNet {
    pub net: MlpParams,
    state_dim: usize,
}

impl QNet {
    pub fn new(net: MlpParams, state_dim: usize) -> Result<Self> {
        if net.output_dim() != 1 || net.input_dim() <= state_dim {
            return Err(Error::invalid("Q net maps state ⊕ control to a scalar"));
        }
        Ok(Self { net, state_dim })
    }

    pub fn init<R: Rng + ?Sized>(
        state_dim: usize,
        control_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim + control_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self::new(MlpParams::init_uniform(&sizes, Activation::Relu, rng)?, state_dim)
    }

    pub fn values(&self, x: ArrayView2<f64>, u: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.net.forward_scalar(concat_state_action(x, u).view())
    }

    pub fn values_tape(&self, x: ArrayView2<f64>, u: ArrayView2<f64>) -> Result<(Array1<f64>, MlpTape)> {
        let (out, tape) = self.net.forward_tape(concat_state_action(x, u).view())?;
        Ok((out.column(0).to_owned(), tape))
    }

    /// Parameter gradient and `∂/∂u` for `Σ upstream_i Q(x_i, u_i)`.
    pub fn backward(&self, tape: &MlpTape, upstream: &Array1<f64>) -> Result<(GradientRecord, Array2<f64>)> {
        let up = upstream.view().insert_axis(ndarray::Axis(1));
        let (g, dz) = self.net.backward(tape, up)?;
        Ok((g, dz.slice(s![.., self.state_dim..]).to_owned()))
    }
}

/// Cost value function `L(x) = softplus(net(x)) ≥ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovNet {
    pub net: MlpParams,
}

impl LyapunovNet {
    pub fn new(net: MlpParams) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(Error::invalid("Lyapunov net must have a scalar output"));
        }
        Ok(Self { net })
    }

    pub fn init<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self::new(MlpParams::init_uniform(&sizes, Activation::Relu, rng)?)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(softplus(self.net.forward(x)?[0]))
    }

    pub fn values_checked(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.net.forward_scalar(x)?.mapv(softplus))
    }

    /// Values plus a tape whose recorded pre-activation lets
    /// [`LyapunovNet::backward`] apply the softplus derivative.
    pub fn values_tape(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, MlpTape)> {
        let (out, tape) = self.net.forward_tape(x)?;
        Ok((out.column(0).mapv(softplus), tape))
    }

    /// Gradients of `Σ upstream_i L(x_i)` with respect to the parameters and
    /// the inputs.
    pub fn backward(&self, tape: &MlpTape, upstream: &Array1<f64>) -> Result<(GradientRecord, Array2<f64>)> {
        let pre = tape.output().column(0);
        let up: Array1<f64> = upstream
            .iter()
            .zip(pre.iter())
            .map(|(u, &z)| u * sigmoid(z))
            .collect();
        self.net.backward(tape, up.view().insert_axis(ndarray::Axis(1)))
    }
}

impl LyapunovCandidate for LyapunovNet {
    fn values(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.values_checked(x).expect("state width matches the Lyapunov net")
    }

    fn values_and_input_grad(&self, x: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
        let (v, tape) = self.values_tape(x).expect("state width matches the Lyapunov net");
        let (_, dx) = self
            .backward(&tape, &Array1::ones(x.nrows()))
            .expect("shapes are consistent");
        (v, dx)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TargetUpdate {
    /// `θ_targ ← τ θ + (1 − τ) θ_targ` after every critic step.
    Polyak { tau: f64 },
    /// `θ_targ ← θ` every `period` critic steps.
    HardCopy { period: usize },
}

impl Default for TargetUpdate {
    fn default() -> Self {
        TargetUpdate::Polyak { tau: 0.005 }
    }
}

/// Twin action-value networks, the Lyapunov network, and their targets.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticSet {
    pub q1: QNet,
    pub q2: QNet,
    pub q1_targ: QNet,
    pub q2_targ: QNet,
    pub lyapunov: LyapunovNet,
    pub lyapunov_targ: LyapunovNet,
}

impl CriticSet {
    pub fn init<R: Rng + ?Sized>(
        state_dim: usize,
        control_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let q1 = QNet::init(state_dim, control_dim, hidden, rng)?;
        let q2 = QNet::init(state_dim, control_dim, hidden, rng)?;
        let lyapunov = LyapunovNet::init(state_dim, hidden, rng)?;
        Ok(Self {
            q1_targ: q1.clone(),
            q2_targ: q2.clone(),
            lyapunov_targ: lyapunov.clone(),
            q1,
            q2,
            lyapunov,
        })
    }

    /// Polyak-averages every target towards its online network.
    pub fn soft_update(&mut self, tau: f64) {
        self.q1_targ.net.polyak_from(&self.q1.net, tau);
        self.q2_targ.net.polyak_from(&self.q2.net, tau);
        self.lyapunov_targ.net.polyak_from(&self.lyapunov.net, tau);
    }

    /// Applies `mode` after the `step`-th critic update (1-based).
    pub fn target_update(&mut self, mode: TargetUpdate, step: usize) {
        match mode {
            TargetUpdate::Polyak { tau } => self.soft_update(tau),
            TargetUpdate::HardCopy { period } => {
                if period > 0 && step % period == 0 {
                    self.soft_update(1.0);
                }
            }
        }
    }
}
