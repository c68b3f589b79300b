//! Five-car chain on a straight road.
//!
//! Cars 1, 2, 3 and 5 follow fixed human-driver laws; car 4 is the robot
//! whose acceleration is the control input. The flattened state layout is
//! `(p₁, v₁, p₂, v₂, …, p₅, v₅)` and is also the layout the dynamics model
//! sees.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff_core::{integrate, IntegratorConfig, Scheme, VectorField};
use crate::error::{Error, Result};

pub const NUM_CARS: usize = 5;
pub const STATE_DIM: usize = 2 * NUM_CARS;
pub const CONTROL_DIM: usize = 1;
/// Index of the controlled car (1-based).
pub const ROBOT: usize = 4;

/// Index of car `car`'s position in the flat state (cars are 1-based).
pub const fn pos_index(car: usize) -> usize {
    2 * (car - 1)
}

pub const fn vel_index(car: usize) -> usize {
    2 * (car - 1) + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemState(pub [f64; STATE_DIM]);

impl SystemState {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; STATE_DIM] = values
            .try_into()
            .map_err(|_| Error::invalid(format!("state needs {STATE_DIM} values, got {}", values.len())))?;
        Ok(Self(arr))
    }

    pub fn position(&self, car: usize) -> f64 {
        self.0[pos_index(car)]
    }

    pub fn velocity(&self, car: usize) -> f64 {
        self.0[vel_index(car)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Distance between car 3 and the robot.
    pub fn lead_gap(&self) -> f64 {
        self.position(3) - self.position(ROBOT)
    }

    /// Distance between the robot and car 5.
    pub fn rear_gap(&self) -> f64 {
        self.position(ROBOT) - self.position(5)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub dt: f64,
    pub v_s: f64,
    pub k_v: f64,
    pub k_b: f64,
    /// Actuation mismatch of the human-driven cars.
    pub d_i: f64,
    pub brake_gap_23: f64,
    pub brake_gap_5: f64,
    pub desired_band: [f64; 2],
    pub d_desired: f64,
    pub bonus: f64,
    /// Weight of the `−u²` control-effort reward term.
    pub effort_weight: f64,
    /// Minimum allowed distance between the robot and its neighbours.
    pub delta: f64,
    pub backup_margin: f64,
    pub u_max: f64,
    pub episode_length: usize,
    /// Initial spacing between cars 1–2 and 2–3.
    pub init_lead_gap: [f64; 2],
    /// Initial spacing between cars 3–4 and 4–5.
    pub init_robot_gap: [f64; 2],
    /// Initial velocities are `v_s` plus a uniform draw from `±init_speed_jitter`.
    pub init_speed_jitter: f64,
    pub scheme: Scheme,
    pub substeps: usize,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            v_s: 3.0,
            k_v: 4.0,
            k_b: 20.0,
            d_i: 0.1,
            brake_gap_23: 6.5,
            brake_gap_5: 13.0,
            desired_band: [9.0, 10.0],
            d_desired: 9.5,
            bonus: 2.0,
            effort_weight: 1.0,
            delta: 3.5,
            backup_margin: 1.0,
            u_max: 20.0,
            episode_length: 300,
            init_lead_gap: [14.0, 16.0],
            init_robot_gap: [8.5, 10.5],
            init_speed_jitter: 0.3,
            scheme: Scheme::Rk4,
            substeps: 1,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        if !(self.desired_band[0] < self.desired_band[1]) {
            return Err(Error::config("desired_band lower bound must be below the upper bound"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::config("delta must be positive"));
        }
        if !(self.u_max > 0.0) {
            return Err(Error::config("u_max must be positive"));
        }
        if self.backup_margin < 0.0 {
            return Err(Error::config("backup_margin must be non-negative"));
        }
        if self.episode_length == 0 {
            return Err(Error::config("episode_length must be at least 1"));
        }
        for (name, r) in [
            ("init_lead_gap", self.init_lead_gap),
            ("init_robot_gap", self.init_robot_gap),
        ] {
            if r[0] > r[1] {
                return Err(Error::config(format!("{name}: lower bound above upper bound")));
            }
        }
        if self.init_robot_gap[0] <= self.delta {
            return Err(Error::config(
                "init_robot_gap must start above delta so initial states are safe",
            ));
        }
        if self.init_speed_jitter < 0.0 {
            return Err(Error::config("init_speed_jitter must be non-negative"));
        }
        self.integrator().validate()
    }

    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig {
            scheme: self.scheme,
            substeps: self.substeps,
            interval: self.dt,
        }
    }

    /// Safety functions `(h₁, h₂)`.
    pub fn barrier_values(&self, x: &SystemState) -> (f64, f64) {
        (x.lead_gap() - self.delta, x.rear_gap() - self.delta)
    }

    pub fn reward(&self, u: f64, next: &SystemState) -> f64 {
        let d = next.lead_gap();
        let in_band = d >= self.desired_band[0] && d <= self.desired_band[1];
        -self.effort_weight * u * u + if in_band { self.bonus } else { 0.0 }
    }

    pub fn cost(&self, next: &SystemState) -> f64 {
        (next.lead_gap() - self.d_desired).abs()
    }
}

/// Accelerations `(a₁, a₂, a₃, a₅)` chosen by the human drivers.
pub fn human_accels(t: f64, x: &SystemState, cfg: &EnvConfig) -> [f64; 4] {
    let a1 = cfg.k_v * (cfg.v_s - 4.0 * t.sin() - x.velocity(1));
    let follow = |car: usize, leader: usize, gap_limit: f64| {
        let gap = x.position(leader) - x.position(car);
        let track = cfg.k_v * (cfg.v_s - x.velocity(car));
        if gap.abs() < gap_limit {
            track - cfg.k_b * gap
        } else {
            track
        }
    };
    [
        a1,
        follow(2, 1, cfg.brake_gap_23),
        follow(3, 2, cfg.brake_gap_23),
        follow(5, 3, cfg.brake_gap_5),
    ]
}

/// Chain dynamics with every acceleration frozen for the interval.
struct HeldAccelerations {
    /// Velocity derivative per car.
    accel: [f64; NUM_CARS],
}

impl VectorField for HeldAccelerations {
    type Tape = ();
    type Grad = ();

    fn eval(&self, _t: ArrayView1<f64>, x: ArrayView2<f64>, _u: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for (mut row, xr) in out.rows_mut().into_iter().zip(x.rows()) {
            for car in 1..=NUM_CARS {
                row[pos_index(car)] = xr[vel_index(car)];
                row[vel_index(car)] = self.accel[car - 1];
            }
        }
        out
    }

    fn eval_tape(
        &self,
        t: ArrayView1<f64>,
        x: ArrayView2<f64>,
        u: ArrayView2<f64>,
    ) -> (Array2<f64>, ()) {
        (self.eval(t, x, u), ())
    }

    fn zero_grad(&self) {}

    fn vjp(&self, _: &(), _up: ArrayView2<f64>, _: &mut ()) -> (Array2<f64>, Array2<f64>) {
        unreachable!("the ground-truth simulator is never differentiated")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: SystemState,
    pub reward: f64,
    pub cost: f64,
    pub h_values: (f64, f64),
    pub violation: bool,
    pub in_backup_zone: bool,
}

pub fn clamp_control(u: f64, cfg: &EnvConfig) -> f64 {
    u.clamp(-cfg.u_max, cfg.u_max)
}

/// Advances the chain by one interval of `cfg.dt`. Returns the outcome and
/// the control actually applied after clamping.
pub fn step(t: f64, x: &SystemState, u: f64, cfg: &EnvConfig) -> Result<(StepOutcome, f64)> {
    if !u.is_finite() {
        return Err(Error::invalid("control is not finite"));
    }
    let u = clamp_control(u, cfg);
    let [a1, a2, a3, a5] = human_accels(t, x, cfg);
    let gain = 1.0 + cfg.d_i;
    let field = HeldAccelerations {
        accel: [gain * a1, gain * a2, gain * a3, u, gain * a5],
    };
    let x0 = ArrayView2::from_shape((1, STATE_DIM), x.as_slice()).expect("row");
    let t0 = Array1::from_elem(1, t);
    let u_arr = Array2::from_elem((1, 1), u);
    let next = integrate(&field, t0.view(), x0, u_arr.view(), &cfg.integrator())?;
    let next = SystemState::from_slice(next.as_slice().expect("contiguous"))?;
    if !next.is_finite() {
        return Err(Error::NumericOverflow { substep: 0 });
    }
    let h_values = cfg.barrier_values(&next);
    let outcome = StepOutcome {
        next_state: next,
        reward: cfg.reward(u, &next),
        cost: cfg.cost(&next),
        h_values,
        violation: h_values.0.min(h_values.1) < 0.0,
        in_backup_zone: backup_zone(&next, cfg),
    };
    Ok((outcome, u))
}

/// Samples an initial state: cars in decreasing position order, gaps drawn
/// from the configured ranges, velocities near `v_s`.
pub fn reset(cfg: &EnvConfig, seed: u64) -> SystemState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_initial(cfg, &mut rng)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

pub fn sample_initial<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> SystemState {
    let gaps = [
        uniform(rng, cfg.init_lead_gap),
        uniform(rng, cfg.init_lead_gap),
        uniform(rng, cfg.init_robot_gap),
        uniform(rng, cfg.init_robot_gap),
    ];
    let mut s = [0.0; STATE_DIM];
    // Car 5 at the origin; each car ahead sits one gap further up the road.
    let mut p = 0.0;
    s[pos_index(5)] = p;
    for (car, gap) in (1..=4).rev().zip(gaps.iter().rev()) {
        p += gap;
        s[pos_index(car)] = p;
    }
    for car in 1..=NUM_CARS {
        s[vel_index(car)] = cfg.v_s + uniform(rng, [-cfg.init_speed_jitter, cfg.init_speed_jitter]);
    }
    SystemState(s)
}

/// True when the robot is close enough to car 5 that the safety-only
/// controller should take over.
pub fn backup_zone(x: &SystemState, cfg: &EnvConfig) -> bool {
    x.rear_gap() < cfg.delta + cfg.backup_margin
}

/// Stateful wrapper used by the training loop.
#[derive(Clone, Debug)]
pub struct CarEnv {
    cfg: EnvConfig,
    state: SystemState,
    step_index: usize,
    rng: ChaCha8Rng,
}

impl CarEnv {
    pub fn new(cfg: EnvConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = sample_initial(&cfg, &mut rng);
        Ok(Self {
            cfg,
            state,
            step_index: 0,
            rng,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.cfg.dt
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn done(&self) -> bool {
        self.step_index >= self.cfg.episode_length
    }

    /// Starts a new episode from the environment's own RNG stream.
    pub fn reset(&mut self) -> SystemState {
        self.state = sample_initial(&self.cfg, &mut self.rng);
        self.step_index = 0;
        self.state
    }

    pub fn step(&mut self, u: f64) -> Result<(StepOutcome, f64)> {
        let (outcome, applied) =
            step(self.time(), &self.state, u, &self.cfg).map_err(|e| Error::EnvFault {
                step: self.step_index,
                reason: e.to_string(),
            })?;
        self.state = outcome.next_state;
        self.step_index += 1;
        Ok((outcome, applied))
    }
}

/// One row of a trajectory dump.
#[derive(Clone, Copy, Debug)]
pub struct TrajectoryRow {
    pub t: f64,
    pub state: SystemState,
    pub u: f64,
    pub outcome: StepOutcome,
    pub backup: bool,
}

pub const TRAJECTORY_HEADER: [&str; 18] = [
    "t", "p1", "v1", "p2", "v2", "p3", "v3", "p4", "v4", "p5", "v5", "u", "reward", "cost", "h1",
    "h2", "violation", "backup",
];

pub fn write_trajectory_csv<W: Write>(out: W, rows: &[TrajectoryRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for r in rows {
        let mut rec: Vec<String> = Vec::with_capacity(TRAJECTORY_HEADER.len());
        rec.push(r.t.to_string());
        rec.extend(r.state.0.iter().map(|v| v.to_string()));
        rec.push(r.u.to_string());
        rec.push(r.outcome.reward.to_string());
        rec.push(r.outcome.cost.to_string());
        rec.push(r.outcome.h_values.0.to_string());
        rec.push(r.outcome.h_values.1.to_string());
        rec.push((r.outcome.violation as u8).to_string());
        rec.push((r.backup as u8).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_file(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trajectory_csv(file, rows).map_err(|e| Error::parse(path, e))
}

/// Rolls out a control sequence from `x0`, returning one row per step.
pub fn simulate(
    cfg: &EnvConfig,
    x0: SystemState,
    controls: &[f64],
) -> Result<Vec<TrajectoryRow>> {
    let mut x = x0;
    let mut rows = Vec::with_capacity(controls.len());
    for (k, &u) in controls.iter().enumerate() {
        let t = k as f64 * cfg.dt;
        let (outcome, applied) = step(t, &x, u, cfg)?;
        rows.push(TrajectoryRow {
            t,
            state: x,
            u: applied,
            outcome,
            backup: outcome.in_backup_zone,
        });
        x = outcome.next_state;
    }
    Ok(rows)
}
