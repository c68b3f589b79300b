use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_HEADER: [&str; 10] = [
    "episode",
    "cum_reward",
    "cum_cost",
    "violations",
    "backup_steps",
    "lambda1",
    "lambda2",
    "zeta",
    "c_p",
    "model_loss",
];

/// One row of the training log. `model_loss` is the mean dynamics-model
/// loss of the updates made during the episode, NaN when there were none.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub cum_reward: f64,
    pub cum_cost: f64,
    pub violations: usize,
    pub backup_steps: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub zeta: f64,
    pub c_p: f64,
    pub model_loss: f64,
}

impl EpisodeRecord {
    /// Equality that treats two NaN losses as equal.
    pub fn same_as(&self, other: &Self) -> bool {
        let loss_eq = self.model_loss == other.model_loss
            || (self.model_loss.is_nan() && other.model_loss.is_nan());
        loss_eq && Self { model_loss: 0.0, ..self.clone() } == Self { model_loss: 0.0, ..other.clone() }
    }
}

/// Appends episode rows to a CSV file, writing the header once.
pub struct EpisodeLog {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl EpisodeLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        writer.write_record(LOG_HEADER).map_err(|e| Error::parse(path, e))?;
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    /// Opens an existing log for appending; writes the header only if the
    /// file is new or empty.
    pub fn append(path: &Path) -> Result<Self> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            writer.write_record(LOG_HEADER).map_err(|e| Error::parse(path, e))?;
            writer.flush().map_err(|e| Error::io(path, e))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn log_episode(&mut self, record: &EpisodeRecord) -> Result<()> {
        self.writer
            .serialize(record)
            .map_err(|e| Error::parse(&self.path, e))?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_log(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let headers = reader.headers().map_err(|e| Error::parse(path, e))?.clone();
    if headers.iter().ne(LOG_HEADER.iter().copied()) {
        return Err(Error::parse(path, format!("unexpected header {headers:?}")));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::parse(path, e)))
        .collect()
}

/// Writes `episode,cum_reward,violations` for plotting.
pub fn write_plot_data<W: Write>(records: &[EpisodeRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "cum_reward", "violations"])?;
    for r in records {
        w.write_record([
            r.episode.to_string(),
            r.cum_reward.to_string(),
            r.violations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
