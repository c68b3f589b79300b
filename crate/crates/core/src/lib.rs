//! Safe and stable actor-critic control with learned neural-ODE dynamics.
//!
//! A neural ODE learns the joint dynamics of the controlled robot and the
//! surrounding human-driven vehicles. Its two-step predictions feed
//! discrete-time control-barrier constraints (safety) and a Lyapunov
//! decrease condition on a learned cost value function (stability). A
//! soft actor-critic policy is trained against these constraints with an
//! augmented Lagrangian, and a second, safety-only policy takes over when
//! the robot gets too close to the car behind it.
//!
//! Module map:
//! - [`diff_core`]: MLPs with a reverse pass, RK4/Euler integration with
//!   gradients through every stage, optimizers.
//! - [`node_model`]: the learned dynamics and its training step.
//! - [`car_env`]: the five-car following simulator.
//! - [`safety_constraints`]: barrier chains, Lyapunov residuals, ReLU
//!   aggregation.
//! - [`actor_critic`]: policies, critics, replay buffer and SAC losses.
//! - [`constrained_opt`]: augmented Lagrangians and multiplier updates.
//! - [`trainer`]: the full training loop, configuration, logs, checkpoints.

pub mod actor_critic;
pub mod car_env;
pub mod constrained_opt;
pub mod diff_core;
pub mod error;
pub mod node_model;
pub mod safety_constraints;
pub mod trainer;

pub use car_env::{CarEnv, EnvConfig, StepOutcome, SystemState};
pub use diff_core::{Activation, GradientRecord, IntegratorConfig, MlpParams, Scheme};
pub use error::{Error, Result};
pub use node_model::{NodeModel, TrajectoryBatch};
