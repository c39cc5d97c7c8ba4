//! Optimisation settings shared by the codec, denoiser and classifier
//! trainers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Passes over the training set; 0 returns the initialised model.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Channel SNR range (dB) sampled uniformly per example for
    /// channel-aware training or noise augmentation. `None` trains clean.
    #[serde(default)]
    pub snr_range_db: Option<(f64, f64)>,
    pub seed: u64,
    /// Fail with `NonConvergence` when the final loss exceeds this.
    #[serde(default)]
    pub max_final_loss: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter("learning_rate must be positive".into()));
        }
        if let Some((lo, hi)) = self.snr_range_db {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidParameter(format!(
                    "snr_range_db ({lo}, {hi}) is not an ordered finite range"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn check_convergence(&self, report: &TrainReport) -> Result<()> {
        if !report.final_loss.is_finite() {
            return Err(Error::NonConvergence {
                final_loss: report.final_loss,
                limit: self.max_final_loss.unwrap_or(f64::INFINITY),
            });
        }
        match self.max_final_loss {
            Some(limit) if report.final_loss > limit => Err(Error::NonConvergence {
                final_loss: report.final_loss,
                limit,
            }),
            _ => Ok(()),
        }
    }
}

/// Loss trajectory of one training job. `initial_loss` and `final_loss`
/// are measured on the same fixed monitoring set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}
