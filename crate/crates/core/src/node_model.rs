//! Learned continuous-time dynamics `ẋ = F_ψ(t, x, u)` and its supervised
//! training on recorded trajectories.
//!
//! The network input is `(t, x, u)`, so for the car chain it takes 12 values
//! and returns the 10 state derivatives. A fixed affine rescaling of inputs
//! and outputs (fitted once from data) keeps the tanh layers out of
//! saturation; it is part of the model and is stored with it.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff_core::{
    integrate, integrate_backward, integrate_tape, Activation, GradientRecord, IntegrationTape,
    IntegratorConfig, MlpParams, MlpTape, Optimizer, OptimizerKind, VectorField,
};
use crate::error::{Error, Result};

/// Fixed input/output scaling around the network:
/// `F(z) = output_scale ⊙ net((z − input_shift) / input_scale)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldScaling {
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_scale: Vec<f64>,
}

impl FieldScaling {
    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_shift: vec![0.0; input_dim],
            input_scale: vec![1.0; input_dim],
            output_scale: vec![1.0; output_dim],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeModel {
    net: MlpParams,
    integrator: IntegratorConfig,
    state_dim: usize,
    control_dim: usize,
    scaling: FieldScaling,
}

impl NodeModel {
    pub fn new(
        net: MlpParams,
        integrator: IntegratorConfig,
        state_dim: usize,
        control_dim: usize,
    ) -> Result<Self> {
        integrator.validate()?;
        if net.input_dim() != state_dim + control_dim + 1 {
            return Err(Error::invalid(format!(
                "dynamics net takes {} inputs, expected time + {state_dim} states + {control_dim} controls",
                net.input_dim()
            )));
        }
        if net.output_dim() != state_dim {
            return Err(Error::invalid(format!(
                "dynamics net returns {} values, expected {state_dim}",
                net.output_dim()
            )));
        }
        let scaling = FieldScaling::identity(net.input_dim(), state_dim);
        Ok(Self {
            net,
            integrator,
            state_dim,
            control_dim,
            scaling,
        })
    }

    /// Randomly initialized tanh network with the given hidden widths.
    pub fn init<R: Rng + ?Sized>(
        state_dim: usize,
        control_dim: usize,
        hidden: &[usize],
        integrator: IntegratorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim + control_dim + 1];
        sizes.extend_from_slice(hidden);
        sizes.push(state_dim);
        let net = MlpParams::init_uniform(&sizes, Activation::Tanh, rng)?;
        Self::new(net, integrator, state_dim, control_dim)
    }

    pub fn net(&self) -> &MlpParams {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut MlpParams {
        &mut self.net
    }

    pub fn integrator(&self) -> &IntegratorConfig {
        &self.integrator
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn scaling(&self) -> &FieldScaling {
        &self.scaling
    }

    pub fn set_scaling(&mut self, scaling: FieldScaling) -> Result<()> {
        let n_in = self.net.input_dim();
        if scaling.input_shift.len() != n_in
            || scaling.input_scale.len() != n_in
            || scaling.output_scale.len() != self.state_dim
        {
            return Err(Error::invalid("scaling dimensions do not match the network"));
        }
        if scaling
            .input_scale
            .iter()
            .chain(&scaling.output_scale)
            .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::invalid("scales must be positive and finite"));
        }
        self.scaling = scaling;
        Ok(())
    }

    /// Fits the input scaling to the spread of `(t, x, u)` in `batch` and the
    /// output scaling to the finite-difference derivatives it implies.
    pub fn fit_scaling(&mut self, batch: &TrajectoryBatch) -> Result<()> {
        let dt = self.integrator.interval;
        let n = self.state_dim;
        let mut inputs = Vec::new();
        let mut derivs = Vec::new();
        for k in 0..batch.horizon() {
            let t = &batch.start_times + k as f64 * dt;
            let z = assemble_input(t.view(), batch.states[k].view(), batch.controls[k].view());
            inputs.push(z);
            derivs.push((&batch.states[k + 1] - &batch.states[k]) / dt);
        }
        let views: Vec<_> = inputs.iter().map(|a| a.view()).collect();
        let z = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::invalid(e.to_string()))?;
        let views: Vec<_> = derivs.iter().map(|a| a.view()).collect();
        let d = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::invalid(e.to_string()))?;
        let spread = |a: ArrayView1<f64>| {
            let std = a.std(0.0);
            if std > 1e-6 {
                std
            } else {
                1.0
            }
        };
        let mut scaling = FieldScaling::identity(z.ncols(), n);
        for j in 0..z.ncols() {
            scaling.input_shift[j] = z.column(j).mean().unwrap_or(0.0);
            scaling.input_scale[j] = spread(z.column(j));
        }
        for j in 0..n {
            scaling.output_scale[j] = spread(d.column(j));
        }
        self.set_scaling(scaling)
    }

    fn field(&self) -> NodeField<'_> {
        NodeField { model: self }
    }

    /// One-interval prediction `x̂' = x + ∫ F_ψ` with `u` held constant.
    pub fn predict_next(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x.len(), u.len())?;
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row");
        let u = ArrayView2::from_shape((1, u.len()), u).expect("row");
        let out = self.predict_batch(Array1::from_elem(1, t).view(), x, u)?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    pub fn predict_batch(
        &self,
        t: ArrayView1<f64>,
        x: ArrayView2<f64>,
        u: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        self.check_dims(x.ncols(), u.ncols())?;
        integrate(&self.field(), t, x, u, &self.integrator)
    }

    pub fn predict_batch_tape(
        &self,
        t: ArrayView1<f64>,
        x: ArrayView2<f64>,
        u: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, StepTape)> {
        self.check_dims(x.ncols(), u.ncols())?;
        let (out, tape) = integrate_tape(&self.field(), t, x, u, &self.integrator)?;
        Ok((out, StepTape(tape)))
    }

    /// Reverse pass of one prediction step: returns `(∂/∂x, ∂/∂u)` and adds
    /// the parameter gradient into `grad`.
    pub fn step_backward(
        &self,
        tape: &StepTape,
        upstream: ArrayView2<f64>,
        grad: &mut GradientRecord,
    ) -> (Array2<f64>, Array2<f64>) {
        integrate_backward(&self.field(), &tape.0, upstream, grad)
    }

    /// Applies `predict_next` once per control, starting at time `t`.
    pub fn rollout(&self, t: f64, x: &[f64], controls: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if controls.is_empty() {
            return Err(Error::invalid("rollout needs at least one control"));
        }
        let dt = self.integrator.interval;
        let mut out = Vec::with_capacity(controls.len());
        let mut cur = x.to_vec();
        for (k, u) in controls.iter().enumerate() {
            cur = self.predict_next(t + k as f64 * dt, &cur, u)?;
            out.push(cur.clone());
        }
        Ok(out)
    }

    fn check_dims(&self, n: usize, m: usize) -> Result<()> {
        if n != self.state_dim || m != self.control_dim {
            return Err(Error::invalid(format!(
                "model expects state {} and control {}, got {n} and {m}",
                self.state_dim, self.control_dim
            )));
        }
        Ok(())
    }
}

pub struct StepTape(IntegrationTape<MlpTape>);

fn assemble_input(t: ArrayView1<f64>, x: ArrayView2<f64>, u: ArrayView2<f64>) -> Array2<f64> {
    let n = x.ncols();
    let mut z = Array2::zeros((x.nrows(), 1 + n + u.ncols()));
    z.column_mut(0).assign(&t);
    z.slice_mut(s![.., 1..1 + n]).assign(&x);
    z.slice_mut(s![.., 1 + n..]).assign(&u);
    z
}

struct NodeField<'a> {
    model: &'a NodeModel,
}

impl NodeField<'_> {
    fn normalized_input(
        &self,
        t: ArrayView1<f64>,
        x: ArrayView2<f64>,
        u: ArrayView2<f64>,
    ) -> Array2<f64> {
        let sc = &self.model.scaling;
        let mut z = assemble_input(t, x, u);
        for (j, mut col) in z.columns_mut().into_iter().enumerate() {
            let (shift, scale) = (sc.input_shift[j], sc.input_scale[j]);
            col.mapv_inplace(|v| (v - shift) / scale);
        }
        z
    }

    fn scale_output(&self, mut y: Array2<f64>) -> Array2<f64> {
        for (j, mut col) in y.columns_mut().into_iter().enumerate() {
            col *= self.model.scaling.output_scale[j];
        }
        y
    }
}

impl VectorField for NodeField<'_> {
    type Tape = MlpTape;
    type Grad = GradientRecord;

    fn eval(&self, t: ArrayView1<f64>, x: ArrayView2<f64>, u: ArrayView2<f64>) -> Array2<f64> {
        let z = self.normalized_input(t, x, u);
        let y = self
            .model
            .net
            .forward_batch(z.view())
            .expect("input width checked by the model");
        self.scale_output(y)
    }

    fn eval_tape(
        &self,
        t: ArrayView1<f64>,
        x: ArrayView2<f64>,
        u: ArrayView2<f64>,
    ) -> (Array2<f64>, MlpTape) {
        let z = self.normalized_input(t, x, u);
        let (y, tape) = self
            .model
            .net
            .forward_tape(z.view())
            .expect("input width checked by the model");
        (self.scale_output(y), tape)
    }

    fn zero_grad(&self) -> GradientRecord {
        GradientRecord::zeros_like(&self.model.net)
    }

    fn vjp(
        &self,
        tape: &MlpTape,
        upstream: ArrayView2<f64>,
        grad: &mut GradientRecord,
    ) -> (Array2<f64>, Array2<f64>) {
        let scaled = self.scale_output(upstream.to_owned());
        let (g, mut dz) = self
            .model
            .net
            .backward(tape, scaled.view())
            .expect("upstream shape matches the output");
        grad.add_assign(&g);
        for (j, mut col) in dz.columns_mut().into_iter().enumerate() {
            col /= self.model.scaling.input_scale[j];
        }
        let n = self.model.state_dim;
        (
            dz.slice(s![.., 1..1 + n]).to_owned(),
            dz.slice(s![.., 1 + n..]).to_owned(),
        )
    }
}

/// Windows of recorded states and controls. Entry `k` of `states` holds the
/// state at step `k` of every window (one window per row); `controls[k]` is
/// the control applied between states `k` and `k+1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    pub start_times: Array1<f64>,
    pub states: Vec<Array2<f64>>,
    pub controls: Vec<Array2<f64>>,
}

impl TrajectoryBatch {
    pub fn new(
        start_times: Array1<f64>,
        states: Vec<Array2<f64>>,
        controls: Vec<Array2<f64>>,
    ) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if states.len() != controls.len() + 1 {
            return Err(Error::invalid(format!(
                "{} states for {} controls; need exactly one more state than controls",
                states.len(),
                controls.len()
            )));
        }
        let b = start_times.len();
        if b == 0 {
            return Err(Error::EmptyBatch);
        }
        let n = states[0].ncols();
        let m = controls[0].ncols();
        if states.iter().any(|s| s.dim() != (b, n)) || controls.iter().any(|c| c.dim() != (b, m)) {
            return Err(Error::invalid("inconsistent batch shapes"));
        }
        Ok(Self {
            start_times,
            states,
            controls,
        })
    }

    /// A single window from one recorded sequence.
    pub fn single(t0: f64, states: &[Vec<f64>], controls: &[Vec<f64>]) -> Result<Self> {
        let row = |v: &Vec<f64>| Array2::from_shape_vec((1, v.len()), v.clone()).expect("row");
        Self::new(
            Array1::from_elem(1, t0),
            states.iter().map(row).collect(),
            controls.iter().map(row).collect(),
        )
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn len(&self) -> usize {
        self.start_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelLossKind {
    /// `(1/h) Σ |x − x̂|`, summed over state components.
    #[default]
    L1,
    Squared,
}

fn loss_terms(kind: ModelLossKind, err: &Array2<f64>) -> (f64, Array2<f64>) {
    match kind {
        ModelLossKind::L1 => (
            err.iter().map(|e| e.abs()).sum(),
            err.mapv(|e| if e > 0.0 { 1.0 } else if e < 0.0 { -1.0 } else { 0.0 }),
        ),
        ModelLossKind::Squared => (err.iter().map(|e| e * e).sum(), err * 2.0),
    }
}

fn rollout_batch(
    model: &NodeModel,
    batch: &TrajectoryBatch,
) -> Result<(Vec<Array2<f64>>, Vec<StepTape>)> {
    let dt = model.integrator.interval;
    let mut preds = Vec::with_capacity(batch.horizon());
    let mut tapes = Vec::with_capacity(batch.horizon());
    let mut cur = batch.states[0].clone();
    for k in 0..batch.horizon() {
        let t = &batch.start_times + k as f64 * dt;
        let (next, tape) = model.predict_batch_tape(t.view(), cur.view(), batch.controls[k].view())?;
        preds.push(next.clone());
        tapes.push(tape);
        cur = next;
    }
    Ok((preds, tapes))
}

/// Multi-step prediction loss averaged over windows.
pub fn model_loss_with(model: &NodeModel, batch: &TrajectoryBatch, kind: ModelLossKind) -> Result<f64> {
    let dt = model.integrator.interval;
    let mut cur = batch.states[0].clone();
    let mut total = 0.0;
    for k in 0..batch.horizon() {
        let t = &batch.start_times + k as f64 * dt;
        cur = model.predict_batch(t.view(), cur.view(), batch.controls[k].view())?;
        total += loss_terms(kind, &(&cur - &batch.states[k + 1])).0;
    }
    Ok(total / (batch.horizon() * batch.len()) as f64)
}

pub fn model_loss(model: &NodeModel, batch: &TrajectoryBatch) -> Result<f64> {
    model_loss_with(model, batch, ModelLossKind::L1)
}

/// Loss and its gradient with respect to the network parameters.
pub fn model_loss_grad(
    model: &NodeModel,
    batch: &TrajectoryBatch,
    kind: ModelLossKind,
) -> Result<GradientRecord> {
    let (preds, tapes) = rollout_batch(model, batch)?;
    let norm = 1.0 / (batch.horizon() * batch.len()) as f64;
    let mut loss = 0.0;
    let mut seeds = Vec::with_capacity(preds.len());
    for (k, pred) in preds.iter().enumerate() {
        let (l, d) = loss_terms(kind, &(pred - &batch.states[k + 1]));
        loss += l;
        seeds.push(d * norm);
    }
    let mut grad = GradientRecord::zeros_like(&model.net);
    let mut x_bar: Option<Array2<f64>> = None;
    for k in (0..preds.len()).rev() {
        let mut up = seeds[k].clone();
        if let Some(carry) = &x_bar {
            up += carry;
        }
        let (dx, _) = model.step_backward(&tapes[k], up.view(), &mut grad);
        x_bar = Some(dx);
    }
    grad.loss = loss * norm;
    Ok(grad)
}

/// One plain gradient-descent step `ψ ← ψ − η ∇ψ ℓ`. Returns the loss
/// before the step.
pub fn train_step(model: &mut NodeModel, batch: &TrajectoryBatch, lr: f64) -> Result<f64> {
    if !(lr >= 0.0) {
        return Err(Error::invalid("learning rate must be non-negative"));
    }
    let grad = model_loss_grad(model, batch, ModelLossKind::L1)?;
    model.net.apply_gradient(&grad, lr);
    Ok(grad.loss)
}

/// Gradient steps on the dynamics model with a configurable optimizer and
/// loss.
#[derive(Clone, Debug)]
pub struct NodeTrainer {
    optimizer: Optimizer,
    loss: ModelLossKind,
}

impl NodeTrainer {
    pub fn new(kind: OptimizerKind, lr: f64, loss: ModelLossKind) -> Self {
        Self {
            optimizer: Optimizer::new(kind, lr),
            loss,
        }
    }

    pub fn step(&mut self, model: &mut NodeModel, batch: &TrajectoryBatch) -> Result<f64> {
        let grad = model_loss_grad(model, batch, self.loss)?;
        if !grad.is_finite() {
            return Err(Error::NumericOverflow { substep: 0 });
        }
        self.optimizer.step(&mut model.net, &grad);
        Ok(grad.loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_model(n: usize, m: usize) -> NodeModel {
        let net = MlpParams::zeros(&[n + m + 1, 4, n], Activation::Tanh).unwrap();
        NodeModel::new(net, IntegratorConfig::default(), n, m).unwrap()
    }

    /// Linear net implementing ẋ = [v; u] for a single (p, v) pair.
    fn double_integrator() -> NodeModel {
        // inputs (t, p, v, u) -> outputs (ṗ, v̇)
        let net = MlpParams::from_layers(
            vec![array![[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]],
            vec![array![0.0, 0.0]],
            Activation::Tanh,
        )
        .unwrap();
        NodeModel::new(net, IntegratorConfig::default(), 2, 1).unwrap()
    }

    #[test]
    fn dimension_checks() {
        let net = MlpParams::zeros(&[11, 4, 10], Activation::Tanh).unwrap();
        assert!(NodeModel::new(net, IntegratorConfig::default(), 10, 1).is_err());
        let m = zero_model(10, 1);
        assert!(m.predict_next(0.0, &[0.0; 9], &[0.0]).is_err());
    }

    #[test]
    fn zero_field_keeps_state() {
        let m = zero_model(10, 1);
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 1.5).collect();
        assert_eq!(m.predict_next(0.3, &x, &[2.0]).unwrap(), x);
        let roll = m.rollout(0.0, &x, &[vec![1.0], vec![-1.0], vec![4.0]]).unwrap();
        assert!(roll.iter().all(|r| *r == x));
    }

    #[test]
    fn rollout_requires_controls() {
        assert!(zero_model(2, 1).rollout(0.0, &[0.0, 0.0], &[]).is_err());
        let m = double_integrator();
        let one = m.rollout(0.0, &[1.0, 2.0], &[vec![0.5]]).unwrap();
        assert_eq!(one, vec![m.predict_next(0.0, &[1.0, 2.0], &[0.5]).unwrap()]);
    }

    #[test]
    fn double_integrator_matches_closed_form() {
        let m = double_integrator();
        let (p, v, u, dt) = (1.0, 2.0, 0.7, 0.02);
        let next = m.predict_next(0.0, &[p, v], &[u]).unwrap();
        assert!((next[0] - (p + v * dt + u * dt * dt / 2.0)).abs() < 1e-10);
        assert!((next[1] - (v + u * dt)).abs() < 1e-10);

        let two = m.rollout(0.0, &[p, v], &[vec![u], vec![u]]).unwrap();
        let t2 = 2.0 * dt;
        assert!((two[1][0] - (p + v * t2 + u * t2 * t2 / 2.0)).abs() < 1e-10);
    }

    #[test]
    fn loss_of_own_rollout_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = NodeModel::init(3, 1, &[8], IntegratorConfig::default(), &mut rng).unwrap();
        let x0 = vec![0.1, -0.2, 0.3];
        let controls = vec![vec![0.5], vec![-0.5]];
        let mut states = vec![x0.clone()];
        states.extend(m.rollout(0.0, &x0, &controls).unwrap());
        let batch = TrajectoryBatch::single(0.0, &states, &controls).unwrap();
        assert_eq!(model_loss(&m, &batch).unwrap(), 0.0);
    }

    #[test]
    fn single_term_l1() {
        let m = zero_model(3, 1);
        let batch = TrajectoryBatch::single(
            0.0,
            &[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
            &[vec![0.0]],
        )
        .unwrap();
        assert_eq!(model_loss(&m, &batch).unwrap(), 1.0);
    }

    #[test]
    fn batch_shape_validation() {
        let s = Array2::<f64>::zeros((2, 3));
        let c = Array2::<f64>::zeros((2, 1));
        assert!(TrajectoryBatch::new(Array1::zeros(2), vec![s.clone()], vec![c.clone()]).is_err());
        assert!(TrajectoryBatch::new(Array1::zeros(2), vec![s.clone()], vec![]).is_err());
        assert!(TrajectoryBatch::new(Array1::zeros(2), vec![s.clone(), s.clone()], vec![c]).is_ok());
    }

    #[test]
    fn zero_lr_leaves_model_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = NodeModel::init(2, 1, &[6], IntegratorConfig::default(), &mut rng).unwrap();
        let before = m.clone();
        let batch =
            TrajectoryBatch::single(0.0, &[vec![1.0, 0.0], vec![1.1, 0.2]], &[vec![1.0]]).unwrap();
        train_step(&mut m, &batch, 0.0).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn scaling_rejects_bad_values() {
        let mut m = zero_model(2, 1);
        let mut sc = FieldScaling::identity(4, 2);
        sc.input_scale[1] = 0.0;
        assert!(m.set_scaling(sc).is_err());
        assert!(m.set_scaling(FieldScaling::identity(3, 2)).is_err());
    }
}
