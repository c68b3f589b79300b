//! Augmented Lagrangian bookkeeping for the primary and backup controllers.
//!
//! Slack variables are minimized out in closed form, so each inequality
//! `f ≤ 0` contributes `λ s + (c/2) s²` with `s = max(f, −λ/c)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierState {
    pub lambda_p: Vec<f64>,
    pub zeta: f64,
    pub lambda_b: Vec<f64>,
    pub c_p: f64,
    pub c_b: f64,
    pub rho_c: f64,
    pub c_max: f64,
}

/// Aggregated (post-ReLU) constraint values of one update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstraintValues {
    pub f_p: Vec<f64>,
    pub g: f64,
    pub f_b: Vec<f64>,
}

/// Lagrangian value and its partial derivatives with respect to each
/// constraint value; the objective enters with weight one.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangianTerms {
    pub value: f64,
    pub f_weights: Vec<f64>,
    pub g_weight: f64,
}

impl MultiplierState {
    pub fn new(num_constraints: usize, c_init: f64, rho_c: f64, c_max: f64) -> Result<Self> {
        let ms = Self {
            lambda_p: vec![0.0; num_constraints],
            zeta: 0.0,
            lambda_b: vec![0.0; num_constraints],
            c_p: c_init,
            c_b: c_init,
            rho_c,
            c_max,
        };
        ms.validate()?;
        Ok(ms)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_c > 1.0 && self.rho_c.is_finite()) {
            return Err(Error::config(format!("rho_c must exceed 1, got {}", self.rho_c)));
        }
        if !(self.c_max > 0.0 && self.c_max.is_finite()) {
            return Err(Error::config("c_max must be positive"));
        }
        for c in [self.c_p, self.c_b] {
            if !(c > 0.0 && c <= self.c_max) {
                return Err(Error::config(format!("penalty {c} outside (0, c_max]")));
            }
        }
        if self.lambda_p.len() != self.lambda_b.len() {
            return Err(Error::config("primary and backup multiplier counts differ"));
        }
        let all = self.lambda_p.iter().chain(&self.lambda_b).chain(std::iter::once(&self.zeta));
        if all.clone().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::config("multipliers must be finite and non-negative"));
        }
        Ok(())
    }

    /// True when every multiplier is finite and non-negative.
    pub fn is_valid(&self) -> bool {
        self.lambda_p
            .iter()
            .chain(&self.lambda_b)
            .chain(std::iter::once(&self.zeta))
            .all(|l| *l >= 0.0 && l.is_finite())
    }
}

/// Effective residual after eliminating the slack: `max(f, −λ/c)`.
pub fn slack_reduce(f: f64, lambda: f64, c: f64) -> f64 {
    f.max(-lambda / c)
}

/// `(λ s + (c/2) s², ∂/∂f)` for one inequality.
fn penalty_term(f: f64, lambda: f64, c: f64) -> (f64, f64) {
    let s = slack_reduce(f, lambda, c);
    let value = lambda * s + 0.5 * c * s * s;
    let weight = if f >= -lambda / c { lambda + c * s } else { 0.0 };
    (value, weight)
}

fn check_len(f: &[f64], lambda: &[f64]) -> Result<()> {
    if f.len() != lambda.len() {
        return Err(Error::invalid(format!(
            "{} constraint values for {} multipliers",
            f.len(),
            lambda.len()
        )));
    }
    Ok(())
}

pub fn primary_lagrangian(objective: f64, f: &[f64], g: f64, ms: &MultiplierState) -> Result<LagrangianTerms> {
    check_len(f, &ms.lambda_p)?;
    let mut value = objective;
    let mut f_weights = Vec::with_capacity(f.len());
    for (&fi, &li) in f.iter().zip(&ms.lambda_p) {
        let (v, w) = penalty_term(fi, li, ms.c_p);
        value += v;
        f_weights.push(w);
    }
    let (v, g_weight) = penalty_term(g, ms.zeta, ms.c_p);
    Ok(LagrangianTerms {
        value: value + v,
        f_weights,
        g_weight,
    })
}

/// Safety-only Lagrangian of the backup controller.
pub fn backup_lagrangian(objective: f64, f: &[f64], ms: &MultiplierState) -> Result<LagrangianTerms> {
    check_len(f, &ms.lambda_b)?;
    let mut value = objective;
    let mut f_weights = Vec::with_capacity(f.len());
    for (&fi, &li) in f.iter().zip(&ms.lambda_b) {
        let (v, w) = penalty_term(fi, li, ms.c_b);
        value += v;
        f_weights.push(w);
    }
    Ok(LagrangianTerms {
        value,
        f_weights,
        g_weight: 0.0,
    })
}

pub fn update_primary_multipliers(ms: &mut MultiplierState, f: &[f64], g: f64) -> Result<()> {
    check_len(f, &ms.lambda_p)?;
    for (l, &fi) in ms.lambda_p.iter_mut().zip(f) {
        *l = (*l + ms.c_p * fi).max(0.0);
    }
    ms.zeta = (ms.zeta + ms.c_p * g).max(0.0);
    Ok(())
}

pub fn update_backup_multipliers(ms: &mut MultiplierState, f: &[f64]) -> Result<()> {
    check_len(f, &ms.lambda_b)?;
    for (l, &fi) in ms.lambda_b.iter_mut().zip(f) {
        *l = (*l + ms.c_b * fi).max(0.0);
    }
    Ok(())
}

pub fn grow_primary_penalty(ms: &mut MultiplierState) {
    ms.c_p = (ms.rho_c * ms.c_p).min(ms.c_max);
}

pub fn grow_backup_penalty(ms: &mut MultiplierState) {
    ms.c_b = (ms.rho_c * ms.c_b).min(ms.c_max);
}
