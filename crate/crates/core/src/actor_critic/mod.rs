//! Stochastic actor-critic components: squashed-Gaussian policies, twin
//! action-value critics, the cost value function used as a Lyapunov
//! candidate, replay, and the associated losses.

mod critics;
mod losses;
mod policy;
mod replay;

pub use critics::{concat_state_action, CriticSet, LyapunovNet, QNet, TargetUpdate};
pub use losses::{
    alpha_loss, lyapunov_loss, policy_objective, policy_objective_terms, q_loss, q_targets, PolicyObjective,
    QLoss,
};
pub use policy::{PolicyNet, PolicySample, LOG_STD_MAX, LOG_STD_MIN};
pub use replay::{Minibatch, ReplayBuffer, Transition};
