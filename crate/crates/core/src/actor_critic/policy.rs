use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diff_core::{softplus, Activation, GradientRecord, MlpParams, MlpTape};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// `ln(1 − tanh²(a))`, stable for large `|a|`.
fn log_one_minus_tanh_sq(a: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - a - softplus(-2.0 * a))
}

/// Tanh-squashed Gaussian policy. The network maps a state to
/// `(mean, log_std)` for each control dimension; actions are
/// `bound · tanh(mean + std · ξ)` with `ξ ~ N(0, I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    net: MlpParams,
    bound: f64,
}

/// A reparameterized batch of actions and everything needed to
/// differentiate through them.
#[derive(Clone, Debug)]
pub struct PolicySample {
    pub actions: Array2<f64>,
    pub log_probs: Array1<f64>,
    noise: Array2<f64>,
    tanh_pre: Array2<f64>,
    std: Array2<f64>,
    log_std_active: Array2<bool>,
    tape: MlpTape,
}

impl PolicyNet {
    pub fn new(net: MlpParams, bound: f64) -> Result<Self> {
        if net.output_dim() % 2 != 0 {
            return Err(Error::invalid("policy net must output a mean and log-std per control"));
        }
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::invalid("action bound must be positive"));
        }
        Ok(Self { net, bound })
    }

    pub fn init<R: Rng + ?Sized>(
        state_dim: usize,
        control_dim: usize,
        hidden: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * control_dim);
        Self::new(MlpParams::init_uniform(&sizes, Activation::Relu, rng)?, bound)
    }

    pub fn net(&self) -> &MlpParams {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut MlpParams {
        &mut self.net
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn control_dim(&self) -> usize {
        self.net.output_dim() / 2
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Reparameterized actions for a batch of states and standard-normal
    /// noise of shape `(batch, control_dim)`.
    pub fn sample_batch(&self, x: ArrayView2<f64>, noise: ArrayView2<f64>) -> Result<PolicySample> {
        let m = self.control_dim();
        if noise.dim() != (x.nrows(), m) {
            return Err(Error::invalid(format!(
                "noise shape {:?} does not match ({}, {m})",
                noise.dim(),
                x.nrows()
            )));
        }
        let (out, tape) = self.net.forward_tape(x)?;
        let b = x.nrows();
        let mut actions = Array2::zeros((b, m));
        let mut tanh_pre = Array2::zeros((b, m));
        let mut std = Array2::zeros((b, m));
        let mut active = Array2::from_elem((b, m), true);
        let mut log_probs = Array1::zeros(b);
        let log_bound = self.bound.ln();
        for i in 0..b {
            let mut lp = 0.0;
            for j in 0..m {
                let mean = out[[i, j]];
                let raw = out[[i, m + j]];
                let log_std = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                active[[i, j]] = (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw);
                let sd = log_std.exp();
                let xi = noise[[i, j]];
                let pre = mean + sd * xi;
                let th = pre.tanh();
                actions[[i, j]] = self.bound * th;
                tanh_pre[[i, j]] = th;
                std[[i, j]] = sd;
                lp += -0.5 * xi * xi - log_std - HALF_LN_2PI - log_bound - log_one_minus_tanh_sq(pre);
            }
            log_probs[i] = lp;
        }
        Ok(PolicySample {
            actions,
            log_probs,
            noise: noise.to_owned(),
            tanh_pre,
            std,
            log_std_active: active,
            tape,
        })
    }

    pub fn sample_with_noise(&self, x: &[f64], noise: &[f64]) -> Result<(Vec<f64>, f64)> {
        let xv = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::invalid(e.to_string()))?;
        let nv = ArrayView2::from_shape((1, noise.len()), noise)
            .map_err(|e| Error::invalid(e.to_string()))?;
        let s = self.sample_batch(xv, nv)?;
        Ok((s.actions.row(0).to_vec(), s.log_probs[0]))
    }

    /// Draws `ξ ~ N(0, I)` from `rng` and returns `(u, log π(u | x))`.
    pub fn sample_action<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let noise: Vec<f64> = (0..self.control_dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_with_noise(x, &noise)
    }

    /// `bound · tanh(mean)`, the action at zero noise.
    pub fn mean_action(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.net.forward(x)?;
        Ok(out[..self.control_dim()]
            .iter()
            .map(|m| self.bound * m.tanh())
            .collect())
    }

    /// Log-density of a given action, including the tanh change of
    /// variables. Actions on or outside the bound have density zero.
    pub fn log_prob(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        let m = self.control_dim();
        if u.len() != m {
            return Err(Error::invalid("action has the wrong dimension"));
        }
        let out = self.net.forward(x)?;
        let mut lp = 0.0;
        for j in 0..m {
            let y = u[j] / self.bound;
            if y.abs() >= 1.0 {
                return Ok(f64::NEG_INFINITY);
            }
            let pre = y.atanh();
            let log_std = out[m + j].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let xi = (pre - out[j]) / log_std.exp();
            lp += -0.5 * xi * xi - log_std - HALF_LN_2PI - self.bound.ln() - log_one_minus_tanh_sq(pre);
        }
        Ok(lp)
    }

    /// Pulls `∂J/∂u` (per row and control) and `∂J/∂log π` (per row) back to
    /// the network parameters, holding the noise fixed.
    pub fn backward(
        &self,
        sample: &PolicySample,
        d_action: ArrayView2<f64>,
        d_log_prob: ArrayView1<f64>,
    ) -> Result<GradientRecord> {
        let (b, m) = sample.actions.dim();
        if d_action.dim() != (b, m) || d_log_prob.len() != b {
            return Err(Error::invalid("upstream shapes do not match the sample"));
        }
        let mut up = Array2::zeros((b, 2 * m));
        for i in 0..b {
            for j in 0..m {
                let th = sample.tanh_pre[[i, j]];
                let du_dpre = self.bound * (1.0 - th * th);
                let sxi = sample.std[[i, j]] * sample.noise[[i, j]];
                let (du, dl) = (d_action[[i, j]], d_log_prob[i]);
                // ∂log π/∂pre = 2 tanh(pre); ∂pre/∂mean = 1; ∂pre/∂log_std = std · ξ.
                up[[i, j]] = du * du_dpre + dl * 2.0 * th;
                if sample.log_std_active[[i, j]] {
                    up[[i, m + j]] = du * du_dpre * sxi + dl * (2.0 * th * sxi - 1.0);
                }
            }
        }
        let (grad, _) = self.net.backward(&sample.tape, up.view())?;
        Ok(grad)
    }
}

impl PolicySample {
    pub fn len(&self) -> usize {
        self.actions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Means of the pre-squash Gaussian (noise removed), for diagnostics.
    pub fn pre_squash_mean(&self) -> Array2<f64> {
        let m = self.actions.ncols();
        self.tape.output().slice(s![.., ..m]).to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy_with_output(mean: f64, log_std: f64, bound: f64) -> PolicyNet {
        let mut net = MlpParams::zeros(&[3, 2], Activation::Relu).unwrap();
        net.biases_mut()[0][0] = mean;
        net.biases_mut()[0][1] = log_std;
        PolicyNet::new(net, bound).unwrap()
    }

    #[test]
    fn deterministic_limit() {
        let p = policy_with_output(0.7, -20.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (u1, _) = p.sample_action(&[0.0; 3], &mut rng).unwrap();
        let (u2, _) = p.sample_action(&[0.0; 3], &mut rng).unwrap();
        let expected = 2.0 * 0.7f64.tanh();
        assert!((u1[0] - expected).abs() < 1e-7);
        assert!((u1[0] - u2[0]).abs() < 1e-7);
        assert!((p.mean_action(&[0.0; 3]).unwrap()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn log_std_is_clamped() {
        let p = policy_with_output(0.0, 50.0, 1.0);
        let (_, lp_hi) = p.sample_with_noise(&[0.0; 3], &[0.0]).unwrap();
        let q = policy_with_output(0.0, LOG_STD_MAX, 1.0);
        let (_, lp_max) = q.sample_with_noise(&[0.0; 3], &[0.0]).unwrap();
        assert_eq!(lp_hi, lp_max);
    }

    #[test]
    fn zero_net_is_symmetric() {
        let p = PolicyNet::new(MlpParams::zeros(&[4, 8, 2], Activation::Relu).unwrap(), 20.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| p.sample_action(&[0.1, 0.2, 0.3, 0.4], &mut rng).unwrap().0[0])
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 0.05 * 20.0, "mean action {mean}");
        // Normalised by the bound, the empirical mean must also be small.
        assert!((mean / 20.0).abs() < 0.05);
    }

    #[test]
    fn sample_and_density_agree() {
        let p = policy_with_output(0.3, -0.4, 3.0);
        let x = [0.0; 3];
        let (u, lp) = p.sample_with_noise(&x, &[0.8]).unwrap();
        let lp2 = p.log_prob(&x, &u).unwrap();
        assert!((lp - lp2).abs() < 1e-9, "{lp} vs {lp2}");
        assert_eq!(p.log_prob(&x, &[3.0]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn actions_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = PolicyNet::init(4, 1, &[16], 2.5, &mut rng).unwrap();
        for _ in 0..200 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let (u, lp) = p.sample_action(&x, &mut rng).unwrap();
            assert!(u[0].abs() <= 2.5);
            assert!(lp.is_finite());
        }
    }
}
