use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Result;

/// SHA-256 of the canonical (key-sorted, compact) JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_value(value)?;
    let text = serde_json::to_string(&canonical)?;
    Ok(hex(&Sha256::digest(text.as_bytes())))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
    pub source: String,
    pub target: String,
    pub self_loops_added: bool,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub early_stopping_patience: usize,
    pub max_epochs: usize,
    pub train_loss: Vec<f64>,
    pub val_micro_f1: Vec<f64>,
    pub best_val_micro_f1: f64,
    pub target_macro_f1: f64,
    pub target_micro_f1: f64,
    pub f_low_transfer: f64,
    pub f_low_cp: f64,
    pub theorem_holds: bool,
    /// The f_low values use a reporting convention (GPRGNN).
    pub f_low_convention_only: bool,
    pub notes: Vec<String>,
    pub wall_clock_secs: f64,
}

impl RunReport {
    /// Hash of everything except wall-clock time.
    pub fn content_hash(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.wall_clock_secs = 0.0;
        config_hash(&copy)
    }
}

/// Mean and sample standard deviation; the deviation is absent for a
/// single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: Option<f64>,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: None,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        Self { mean, std }
    }
}
