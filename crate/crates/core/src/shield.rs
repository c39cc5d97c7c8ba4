//! Artificial-noise design at the transmitter and its power allocation.

use serde::{Deserialize, Serialize};

use crate::eavesdrop::DifferentiableClassifier;
use crate::error::{Error, Result};
use crate::jammer::{power_constrained_attack, AttackObjective, AttackOutcome, AttackSpec};
use crate::signal::{LatentSignal, RngStream};

/// i.i.d. zero-mean Gaussian AN with per-dimension variance `power`.
pub fn gen_gaussian_an(dim: usize, power: f64, rng: &mut RngStream) -> Result<LatentSignal> {
    if !(power >= 0.0 && power.is_finite()) {
        return Err(Error::InvalidParameter(format!("AN power {power} must be non-negative")));
    }
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    let sigma = power.sqrt();
    LatentSignal::new(rng.gaussian_vec(dim).into_iter().map(|v| sigma * v).collect())
}

/// Eve's cross-entropy at the true labels, as an attack objective.
pub struct EveObjective<'a, C: DifferentiableClassifier + ?Sized> {
    pub eve: &'a C,
    pub labels: &'a [u8],
}

impl<C: DifferentiableClassifier + ?Sized> AttackObjective for EveObjective<'_, C> {
    fn loss_grad(&self, inputs: &[LatentSignal]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        self.eve.loss_grad(inputs, self.labels)
    }
}

/// Adversarial AN for a batch: perturbations of exact power `power` that
/// push Eve's classifier away from the true labels.
pub fn gen_adversarial_an_batch<C: DifferentiableClassifier + ?Sized>(
    eve: &C,
    zs: &[LatentSignal],
    labels: &[u8],
    power: f64,
    spec: &AttackSpec,
    rng: &mut RngStream,
) -> Result<AttackOutcome> {
    if zs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: zs.len(),
            actual: labels.len(),
        });
    }
    power_constrained_attack(&EveObjective { eve, labels }, zs, power, spec, rng)
}

/// Single-latent adversarial AN. The flag reports a vanished gradient.
pub fn gen_adversarial_an<C: DifferentiableClassifier + ?Sized>(
    eve: &C,
    z: &LatentSignal,
    label: u8,
    power: f64,
    spec: &AttackSpec,
    rng: &mut RngStream,
) -> Result<(LatentSignal, bool)> {
    let mut out = gen_adversarial_an_batch(eve, std::slice::from_ref(z), &[label], power, spec, rng)?;
    Ok((out.deltas.remove(0), out.zero_gradient[0]))
}

/// Mean squared per-dimension difference between the transmitter output
/// before and after AN injection.
pub fn perceptibility_mse(z_clean: &LatentSignal, z_an: &LatentSignal) -> Result<f64> {
    z_clean.check_dim(z_an)?;
    Ok(z_clean
        .values()
        .iter()
        .zip(z_an.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / z_clean.dim() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct AllocationWeights {
    security: f64,
    reliability: f64,
    covertness: f64,
}

impl AllocationWeights {
    pub fn new(security: f64, reliability: f64, covertness: f64) -> Result<Self> {
        let w = [security, reliability, covertness];
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!("weights {w:?} must be non-negative")));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("weights {w:?} must sum to 1")));
        }
        Ok(Self {
            security,
            reliability,
            covertness,
        })
    }

    pub fn security(&self) -> f64 {
        self.security
    }

    pub fn reliability(&self) -> f64 {
        self.reliability
    }

    pub fn covertness(&self) -> f64 {
        self.covertness
    }
}

impl Default for AllocationWeights {
    fn default() -> Self {
        Self {
            security: 0.4,
            reliability: 0.4,
            covertness: 0.2,
        }
    }
}

impl TryFrom<[f64; 3]> for AllocationWeights {
    type Error = Error;

    fn try_from(w: [f64; 3]) -> Result<Self> {
        Self::new(w[0], w[1], w[2])
    }
}

impl From<AllocationWeights> for [f64; 3] {
    fn from(w: AllocationWeights) -> Self {
        [w.security, w.reliability, w.covertness]
    }
}

/// Raw metrics at one AN power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerMetrics {
    pub privacy_mi: f64,
    pub comm_mse: f64,
    pub percept_mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub an_power: f64,
    pub metrics: PowerMetrics,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub an_power: f64,
    pub metrics: PowerMetrics,
    pub objective: f64,
    /// Every evaluated point, in grid order.
    pub table: Vec<GridPoint>,
}

/// Twenty log-spaced powers from 1e-3 to 0.5.
pub fn default_an_grid() -> Vec<f64> {
    let (lo, hi) = (1e-3f64.ln(), 0.5f64.ln());
    (0..20).map(|i| (lo + (hi - lo) * i as f64 / 19.0).exp()).collect()
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Scalarised objective per grid point: each metric is min-max normalised
/// across the grid, then weighted.
pub fn scalarize(metrics: &[PowerMetrics], w: &AllocationWeights) -> Vec<f64> {
    let mi = min_max(&metrics.iter().map(|m| m.privacy_mi).collect::<Vec<_>>());
    let mse = min_max(&metrics.iter().map(|m| m.comm_mse).collect::<Vec<_>>());
    let per = min_max(&metrics.iter().map(|m| m.percept_mse).collect::<Vec<_>>());
    (0..metrics.len())
        .map(|i| w.security * mi[i] + w.reliability * mse[i] + w.covertness * per[i])
        .collect()
}

/// Exhaustive search over `grid`. Ties go to the smaller power.
pub fn allocate_power<F>(grid: &[f64], mut evaluator: F, w: &AllocationWeights) -> Result<AllocationResult>
where
    F: FnMut(f64) -> Result<PowerMetrics>,
{
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty AN power grid".into()));
    }
    if let Some(p) = grid.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
        return Err(Error::InvalidParameter(format!("grid power {p} must be non-negative")));
    }
    let metrics = grid
        .iter()
        .map(|&p| {
            let m = evaluator(p)?;
            if [m.privacy_mi, m.comm_mse, m.percept_mse].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("allocation metric"));
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let objective = scalarize(&metrics, w);
    let mut best = 0;
    for i in 1..grid.len() {
        let better = objective[i] < objective[best]
            || (objective[i] == objective[best] && grid[i] < grid[best]);
        if better {
            best = i;
        }
    }
    let table = grid
        .iter()
        .zip(&metrics)
        .zip(&objective)
        .map(|((&an_power, &metrics), &objective)| GridPoint {
            an_power,
            metrics,
            objective,
        })
        .collect();
    Ok(AllocationResult {
        an_power: grid[best],
        metrics: metrics[best],
        objective: objective[best],
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::measure_power;

    fn synthetic(p: f64) -> Result<PowerMetrics> {
        Ok(PowerMetrics {
            privacy_mi: 2.3 * (-20.0 * p).exp(),
            comm_mse: 0.003 + 0.02 * p,
            percept_mse: p,
        })
    }

    #[test]
    fn gaussian_an_statistics() {
        assert_eq!(measure_power(&gen_gaussian_an(16, 0.0, &mut RngStream::new(0, 0)).unwrap()), 0.0);
        let an = gen_gaussian_an(100_000, 0.09, &mut RngStream::new(1, 0)).unwrap();
        assert!((measure_power(&an) / 0.09 - 1.0).abs() < 0.05);
        let again = gen_gaussian_an(100_000, 0.09, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(an, again);
        assert!(gen_gaussian_an(4, -0.1, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn perceptibility_identities() {
        let z = LatentSignal::new(vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(perceptibility_mse(&z, &z).unwrap(), 0.0);
        let an = gen_gaussian_an(100_000, 0.09, &mut RngStream::new(2, 0)).unwrap();
        let base = LatentSignal::new(vec![1.0; 100_000]).unwrap();
        let mse = perceptibility_mse(&base, &base.add(&an).unwrap()).unwrap();
        assert!((mse / 0.09 - 1.0).abs() < 0.05);
        assert!(perceptibility_mse(&z, &LatentSignal::zeros(2)).is_err());
    }

    #[test]
    fn weights_live_on_the_simplex() {
        assert!(AllocationWeights::new(0.2, 0.3, 0.5).is_ok());
        assert!(AllocationWeights::new(0.2, 0.3, 0.6).is_err());
        assert!(AllocationWeights::new(-0.1, 0.6, 0.5).is_err());
        let w: AllocationWeights = serde_json::from_str("[0.5, 0.5, 0.0]").unwrap();
        assert_eq!(w.security(), 0.5);
        assert!(serde_json::from_str::<AllocationWeights>("[1.0, 1.0, 0.0]").is_err());
    }

    #[test]
    fn degenerate_weights_pick_grid_extremes() {
        let grid = default_an_grid();
        let rel = allocate_power(&grid, synthetic, &AllocationWeights::new(0.0, 1.0, 0.0).unwrap()).unwrap();
        assert_eq!(rel.an_power, grid[0]);
        let sec = allocate_power(&grid, synthetic, &AllocationWeights::new(1.0, 0.0, 0.0).unwrap()).unwrap();
        assert_eq!(sec.an_power, grid[19]);
        assert_eq!(sec.table.len(), 20);
    }

    #[test]
    fn ties_prefer_smaller_power() {
        let flat = |_p: f64| -> Result<PowerMetrics> {
            Ok(PowerMetrics {
                privacy_mi: 1.0,
                comm_mse: 1.0,
                percept_mse: 1.0,
            })
        };
        let res = allocate_power(&[0.3, 0.1, 0.2], flat, &AllocationWeights::default()).unwrap();
        assert_eq!(res.an_power, 0.1);
    }

    #[test]
    fn rejects_bad_grids() {
        let w = AllocationWeights::default();
        assert!(allocate_power(&[], synthetic, &w).is_err());
        assert!(allocate_power(&[0.1, -0.2], synthetic, &w).is_err());
        assert!(allocate_power(&[0.1], |_| Ok(PowerMetrics { privacy_mi: f64::NAN, comm_mse: 0.0, percept_mse: 0.0 }), &w).is_err());
    }

    #[test]
    fn default_grid_endpoints() {
        let g = default_an_grid();
        assert_eq!(g.len(), 20);
        assert!((g[0] - 1e-3).abs() < 1e-15);
        assert!((g[19] - 0.5).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
