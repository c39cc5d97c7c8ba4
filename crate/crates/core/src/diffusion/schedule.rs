use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::LatentSignal;

/// Diffusion variance schedule. Time-steps are 1-based: `t = 1` is the
/// least noisy step, `t = T` the noisiest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct VarianceSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleRepr {
    betas: Vec<f64>,
}

impl TryFrom<ScheduleRepr> for VarianceSchedule {
    type Error = Error;

    fn try_from(r: ScheduleRepr) -> Result<Self> {
        VarianceSchedule::from_betas(r.betas)
    }
}

impl From<VarianceSchedule> for ScheduleRepr {
    fn from(s: VarianceSchedule) -> Self {
        ScheduleRepr { betas: s.betas }
    }
}

impl Default for VarianceSchedule {
    fn default() -> Self {
        make_schedule(200, 1e-4, 0.05).expect("valid default schedule")
    }
}

/// Linearly spaced betas from `beta_start` to `beta_end` over `steps`.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<VarianceSchedule> {
    if steps == 0 {
        return Err(Error::InvalidParameter("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let betas = if steps == 1 {
        vec![beta_start]
    } else {
        (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect()
    };
    VarianceSchedule::from_betas(betas)
}

impl VarianceSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidParameter("empty beta sequence".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidParameter(format!("beta {b} outside (0, 1)")));
        }
        let alpha_bars = betas
            .iter()
            .scan(1.0f64, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.betas[t - 1])
    }

    /// Cumulative product up to and including `t`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        self.check(t)?;
        Ok(self.alpha_bars[t - 1])
    }
}

/// Closed-form marginal `sqrt(a) x0 + sqrt(1 - a) eps` with `a = alpha_bar(t)`.
pub fn forward_diffuse(
    x0: &LatentSignal,
    t: usize,
    eps: &LatentSignal,
    sch: &VarianceSchedule,
) -> Result<LatentSignal> {
    x0.check_dim(eps)?;
    sch.check(t)?;
    let a = sch.alpha_bars[t - 1];
    let (s, n) = (a.sqrt(), (1.0 - a).sqrt());
    LatentSignal::new(
        x0.values()
            .iter()
            .zip(eps.values())
            .map(|(x, e)| s * x + n * e)
            .collect(),
    )
}

/// Signal-to-noise ratio of the forward marginal at `t`.
pub fn forward_snr(t: usize, sch: &VarianceSchedule) -> Result<f64> {
    sch.check(t)?;
    let a = sch.alpha_bars[t - 1];
    Ok(a / (1.0 - a))
}

/// Time-step whose forward SNR is closest to `observed_snr_linear` in the
/// log domain. Ties go to the larger `t`; `+inf` maps to `t = 1`.
pub fn estimate_timestep(observed_snr_linear: f64, sch: &VarianceSchedule) -> Result<usize> {
    if !(observed_snr_linear > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "observed SNR must be positive, got {observed_snr_linear}"
        )));
    }
    if observed_snr_linear == f64::INFINITY {
        return Ok(1);
    }
    let target = observed_snr_linear.ln();
    let mut best = (1usize, f64::INFINITY);
    for (i, &a) in sch.alpha_bars.iter().enumerate() {
        let d = ((a / (1.0 - a)).ln() - target).abs();
        if d <= best.1 {
            best = (i + 1, d);
        }
    }
    Ok(best.0)
}
