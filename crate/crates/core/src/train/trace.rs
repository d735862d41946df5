use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    /// Stopped early because the loss reached the configured target.
    ReachedTarget,
    /// A loss or gradient became non-finite or left the rate domain.
    Diverged,
}

/// Per-iteration record of a training run. Entry `m` describes the iterate
/// `Theta^m` before the `m`-th update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub loss: Vec<f64>,
    pub grad_norm: Vec<f64>,
    /// `loss[m+1] / loss[m]`; only recorded for full-batch runs.
    pub decay_ratio: Vec<Option<f64>>,
    /// Largest distance of any output from `[0, pmax]`.
    pub violation: Vec<f64>,
    /// Loss at the returned parameters.
    pub final_loss: f64,
    pub wall_ms: f64,
    /// Step size (GD) or learning rate (RMSprop) that was used.
    pub eta_used: f64,
    pub status: TrainStatus,
    /// Leading iterations spent on supervised pretraining.
    pub pretrain_iters: usize,
}

impl TrainTrace {
    pub fn iterations(&self) -> usize {
        self.loss.len()
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serialize(e.to_string()))?;
        let ser = |e: csv::Error| Error::Serialize(e.to_string());
        w.write_record(["iter", "loss", "grad_norm", "decay_ratio", "violation"]).map_err(ser)?;
        for m in 0..self.loss.len() {
            let ratio = self.decay_ratio[m].map(|r| r.to_string()).unwrap_or_default();
            w.write_record([
                m.to_string(),
                self.loss[m].to_string(),
                self.grad_norm[m].to_string(),
                ratio,
                self.violation[m].to_string(),
            ])
            .map_err(ser)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::Serialize(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, "document", e.to_string()))
    }
}
