use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::critics::CriticSet;
use super::policy::{PolicyNet, PolicySample};
use super::replay::Minibatch;
use crate::diff_core::GradientRecord;
use crate::error::{Error, Result};

/// Bellman losses of both action-value networks against one shared target.
#[derive(Clone, Debug)]
pub struct QLoss {
    pub loss1: f64,
    pub loss2: f64,
    pub grad1: GradientRecord,
    pub grad2: GradientRecord,
    pub targets: Array1<f64>,
}

/// `r + γ (1 − d) (min_j Q_targ,j(x′, ũ′) − α log π(ũ′ | x′))` with
/// `ũ′ = ũ(x′, ξ′)`.
pub fn q_targets(
    critics: &CriticSet,
    policy: &PolicyNet,
    alpha: f64,
    batch: &Minibatch,
    gamma: f64,
    next_noise: ArrayView2<f64>,
) -> Result<Array1<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let next = policy.sample_batch(batch.next_states.view(), next_noise)?;
    let q1 = critics.q1_targ.values(batch.next_states.view(), next.actions.view())?;
    let q2 = critics.q2_targ.values(batch.next_states.view(), next.actions.view())?;
    Ok((0..batch.len())
        .map(|i| {
            let soft = q1[i].min(q2[i]) - alpha * next.log_probs[i];
            batch.rewards[i] + gamma * (1.0 - batch.done[i]) * soft
        })
        .collect())
}

pub fn q_loss(
    critics: &CriticSet,
    policy: &PolicyNet,
    alpha: f64,
    batch: &Minibatch,
    gamma: f64,
    next_noise: ArrayView2<f64>,
) -> Result<QLoss> {
    let targets = q_targets(critics, policy, alpha, batch, gamma, next_noise)?;
    let inv_b = 1.0 / batch.len() as f64;
    let fit = |q: &super::critics::QNet| -> Result<(f64, GradientRecord)> {
        let (v, tape) = q.values_tape(batch.states.view(), batch.controls.view())?;
        let err = &v - &targets;
        let loss = err.mapv(|e| e * e).sum() * inv_b;
        let (mut g, _) = q.backward(&tape, &(err * (2.0 * inv_b)))?;
        g.loss = loss;
        Ok((loss, g))
    };
    let (loss1, grad1) = fit(&critics.q1)?;
    let (loss2, grad2) = fit(&critics.q2)?;
    Ok(QLoss {
        loss1,
        loss2,
        grad1,
        grad2,
        targets,
    })
}

/// Temporal-difference loss of the cost value function,
/// `mean (c + γ_c (1 − d) L_targ(x′) − L(x))²`.
pub fn lyapunov_loss(critics: &CriticSet, batch: &Minibatch, gamma_c: f64) -> Result<GradientRecord> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let inv_b = 1.0 / batch.len() as f64;
    let l_next = critics.lyapunov_targ.values_checked(batch.next_states.view())?;
    let targets: Array1<f64> = (0..batch.len())
        .map(|i| batch.costs[i] + gamma_c * (1.0 - batch.done[i]) * l_next[i])
        .collect();
    let (l, tape) = critics.lyapunov.values_tape(batch.states.view())?;
    let err = &l - &targets;
    let loss = err.mapv(|e| e * e).sum() * inv_b;
    let (mut g, _) = critics.lyapunov.backward(&tape, &(err * (2.0 * inv_b)))?;
    g.loss = loss;
    Ok(g)
}

/// `J(α) = −α · mean(log π + H)` and its derivative with respect to
/// `log α`.
pub fn alpha_loss(log_alpha: f64, log_probs: ArrayView1<f64>, target_entropy: f64) -> Result<(f64, f64)> {
    let mean = log_probs.mean().ok_or(Error::EmptyBatch)?;
    let alpha = log_alpha.exp();
    let value = -alpha * (mean + target_entropy);
    Ok((value, value))
}

/// `−V` for a reparameterized batch together with its partial derivatives
/// with respect to each sampled action and log-probability.
#[derive(Clone, Debug)]
pub struct PolicyObjective {
    pub value: f64,
    pub d_action: Array2<f64>,
    pub d_log_prob: Array1<f64>,
    pub sample: PolicySample,
}

/// `mean(α log π(ũ | x) − min_j Q_j(x, ũ))` with `ũ = ũ(x, ξ)`.
pub fn policy_objective_terms(
    policy: &PolicyNet,
    critics: &CriticSet,
    alpha: f64,
    states: ArrayView2<f64>,
    noise: ArrayView2<f64>,
) -> Result<PolicyObjective> {
    let b = states.nrows();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    let sample = policy.sample_batch(states, noise)?;
    let (q1, t1) = critics.q1.values_tape(states, sample.actions.view())?;
    let (q2, t2) = critics.q2.values_tape(states, sample.actions.view())?;
    let inv_b = 1.0 / b as f64;
    let pick1: Array1<f64> = q1.iter().zip(&q2).map(|(a, c)| if a <= c { 1.0 } else { 0.0 }).collect();
    let value = (0..b)
        .map(|i| alpha * sample.log_probs[i] - q1[i].min(q2[i]))
        .sum::<f64>()
        * inv_b;
    let (_, du1) = critics.q1.backward(&t1, &(&pick1 * -inv_b))?;
    let (_, du2) = critics.q2.backward(&t2, &(pick1.mapv(|p| 1.0 - p) * -inv_b))?;
    Ok(PolicyObjective {
        value,
        d_action: du1 + du2,
        d_log_prob: Array1::from_elem(b, alpha * inv_b),
        sample,
    })
}

/// Value and parameter gradient of the policy objective.
pub fn policy_objective(
    policy: &PolicyNet,
    critics: &CriticSet,
    alpha: f64,
    states: ArrayView2<f64>,
    noise: ArrayView2<f64>,
) -> Result<(f64, GradientRecord)> {
    let obj = policy_objective_terms(policy, critics, alpha, states, noise)?;
    let mut g = policy.backward(&obj.sample, obj.d_action.view(), obj.d_log_prob.view())?;
    g.loss = obj.value;
    Ok((obj.value, g))
}
