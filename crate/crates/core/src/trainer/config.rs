use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::actor_critic::TargetUpdate;
use crate::car_env::EnvConfig;
use crate::diff_core::OptimizerKind;
use crate::error::{Error, Result};
use crate::node_model::ModelLossKind;

/// Which parts of the constrained machinery are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Barrier and Lyapunov constraints on the primary policy, backup policy
    /// trained with barrier constraints.
    #[default]
    Nlbac,
    /// Constraints are built but every value is replaced by zero.
    ForcedZero,
    /// Plain soft actor-critic: no constraints, no dynamics model.
    Sac,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub mode: TrainMode,
    pub episodes: usize,
    pub seed: u64,
    pub out_dir: PathBuf,

    /// Learning rate of the dynamics model (η₁).
    pub lr_model: f64,
    /// Learning rate of the Q and Lyapunov networks (η₂).
    pub lr_critic: f64,
    /// Learning rate of both policies and their entropy coefficients (η₃).
    pub lr_policy: f64,
    pub optimizer: OptimizerKind,
    pub model_optimizer: OptimizerKind,

    /// Delay, in steps, between dynamics-model updates.
    pub n_m: usize,
    /// Delay between multiplier updates.
    pub n_l: usize,
    /// Delay between backup-policy updates.
    pub n_b: usize,

    pub gamma: f64,
    pub gamma_c: f64,
    pub beta: f64,
    /// Class-K gains of the barrier chain, one per prediction step.
    pub cbf_gains: Vec<f64>,
    pub use_backup: bool,
    /// Steps the backup policy may act before the primary policy takes over
    /// again, even inside the backup zone.
    pub backup_dwell: usize,

    pub hidden: Vec<usize>,
    pub model_hidden: Vec<usize>,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub target_update: TargetUpdate,
    pub target_entropy: f64,
    pub init_alpha: f64,

    pub c_init: f64,
    pub rho_c: f64,
    pub c_max: f64,

    /// Random-control episodes collected before the first update.
    pub warmup_episodes: usize,
    /// Gradient steps on the dynamics model before training starts.
    pub model_pretrain_steps: usize,
    pub model_batch: usize,
    pub model_horizon: usize,
    pub model_loss: ModelLossKind,
    /// Std of the Gaussian random controls used for warm-up and
    /// identification data.
    pub explore_std: f64,

    /// Gradient steps of the standalone identification run.
    pub sysid_steps: usize,
    pub sysid_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            mode: TrainMode::Nlbac,
            episodes: 50,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            lr_model: 1e-3,
            lr_critic: 3e-4,
            lr_policy: 3e-4,
            optimizer: OptimizerKind::Adam,
            model_optimizer: OptimizerKind::Adam,
            n_m: 5,
            n_l: 10,
            n_b: 2,
            gamma: 0.99,
            gamma_c: 0.995,
            beta: 0.01,
            cbf_gains: vec![0.2, 0.2],
            use_backup: true,
            backup_dwell: 20,
            hidden: vec![64, 64],
            model_hidden: vec![64, 64],
            batch_size: 128,
            replay_capacity: 100_000,
            target_update: TargetUpdate::default(),
            target_entropy: -1.0,
            init_alpha: 0.2,
            c_init: 1.0,
            rho_c: 1.0002,
            c_max: 1e3,
            warmup_episodes: 2,
            model_pretrain_steps: 500,
            model_batch: 64,
            model_horizon: 2,
            model_loss: ModelLossKind::L1,
            explore_std: 5.0,
            sysid_steps: 5000,
            sysid_episodes: 10,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml_str(&text).map_err(|e| Error::parse(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        for (name, v) in [("n_m", self.n_m), ("n_l", self.n_l), ("n_b", self.n_b)] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        for (name, v) in [
            ("lr_model", self.lr_model),
            ("lr_critic", self.lr_critic),
            ("lr_policy", self.lr_policy),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config(format!("beta {} outside (0, 1]", self.beta)));
        }
        for (name, g) in [("gamma", self.gamma), ("gamma_c", self.gamma_c)] {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::config(format!("{name} outside [0, 1]")));
            }
        }
        if self.cbf_gains.is_empty() || self.cbf_gains.iter().any(|&g| !(g > 0.0 && g <= 1.0)) {
            return Err(Error::config("cbf_gains must be non-empty and lie in (0, 1]"));
        }
        if !(self.rho_c > 1.0) {
            return Err(Error::config("rho_c must exceed 1"));
        }
        if !(self.c_init > 0.0 && self.c_init <= self.c_max) {
            return Err(Error::config("c_init must lie in (0, c_max]"));
        }
        if self.batch_size == 0 || self.model_batch == 0 || self.model_horizon == 0 {
            return Err(Error::config("batch sizes and model_horizon must be positive"));
        }
        if self.replay_capacity < self.batch_size {
            return Err(Error::config("replay_capacity must hold at least one batch"));
        }
        if !(self.init_alpha > 0.0) {
            return Err(Error::config("init_alpha must be positive"));
        }
        if !(self.explore_std >= 0.0) {
            return Err(Error::config("explore_std must be non-negative"));
        }
        match self.target_update {
            TargetUpdate::Polyak { tau } if !(0.0..=1.0).contains(&tau) => {
                return Err(Error::config("target tau outside [0, 1]"))
            }
            TargetUpdate::HardCopy { period: 0 } => {
                return Err(Error::config("hard-copy period must be positive"))
            }
            _ => {}
        }
        if self.warmup_episodes * self.env.episode_length < self.batch_size {
            return Err(Error::config("warm-up must collect at least one batch of transitions"));
        }
        Ok(())
    }
}
