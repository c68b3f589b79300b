use serde::{Deserialize, Serialize};

/// Delayed-update cadence keyed on the global step counter `N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub n_m: usize,
    pub n_l: usize,
    pub n_b: usize,
}

/// Updates due at one step, in the order they are applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpdateFlags {
    pub model: bool,
    pub multipliers: bool,
    pub backup: bool,
    pub backup_multipliers: bool,
}

impl Schedule {
    pub fn due(&self, n: u64) -> UpdateFlags {
        let every = |k: usize| n % k as u64 == 0;
        let backup = every(self.n_b);
        UpdateFlags {
            model: every(self.n_m),
            multipliers: every(self.n_l),
            backup,
            backup_multipliers: backup && every(self.n_b * self.n_l),
        }
    }
}

/// Number of times each scheduled update actually ran.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateCounts {
    pub steps: u64,
    pub model: u64,
    pub critic: u64,
    pub policy: u64,
    pub multipliers: u64,
    pub backup: u64,
    pub backup_multipliers: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    Primary,
    Backup,
}

/// Backup policy acts while the robot is in the backup zone and the dwell
/// budget is not exhausted.
pub fn select_controller(in_backup_zone: bool, dwell_remaining: usize) -> Controller {
    if in_backup_zone && dwell_remaining > 0 {
        Controller::Backup
    } else {
        Controller::Primary
    }
}

/// Tracks the dwell budget across steps: entering the zone grants
/// `limit` backup steps, leaving it restores the budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackupSwitch {
    limit: usize,
    remaining: usize,
    inside: bool,
}

impl BackupSwitch {
    pub fn new(limit: usize) -> Self {
        Self {
            limit,
            remaining: limit,
            inside: false,
        }
    }

    pub fn remaining(&self) -> usize {
        self.remaining
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.limit);
    }

    pub fn select(&mut self, in_backup_zone: bool) -> Controller {
        if !in_backup_zone {
            self.reset();
            return Controller::Primary;
        }
        if !self.inside {
            self.inside = true;
            self.remaining = self.limit;
        }
        let c = select_controller(true, self.remaining);
        if c == Controller::Backup {
            self.remaining -= 1;
        }
        c
    }
}
