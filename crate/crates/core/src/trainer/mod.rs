//! The training loop: data collection, the delayed-update schedule,
//! controller switching, logging, checkpoints, and standalone system
//! identification.

mod agent;
mod checkpoint;
mod config;
mod features;
mod log;
mod run;
mod schedule;
mod sysid;

pub use agent::{car_barriers, gaussian, Agent, RngStreams, StepStats};
pub use checkpoint::{Checkpoint, LayerDoc, NetworkDoc, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{TrainConfig, TrainMode};
pub use features::{FeatureLyapunov, ObservationMap};
pub use log::{read_log, write_plot_data, EpisodeLog, EpisodeRecord, LOG_HEADER};
pub use run::{evaluate, train, EvalOutcome, RunStats, TrainOutcome, Trainer, NETWORKS};
pub use schedule::{select_controller, BackupSwitch, Controller, Schedule, UpdateCounts, UpdateFlags};
pub use sysid::{collect_random_episodes, run_sysid, terminal_l1, SysidReport};
