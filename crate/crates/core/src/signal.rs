//! Signal containers, power accounting, decibel conversions and the AWGN
//! channel shared by every stage of the pipeline.
//!
//! Channel symbols are real vectors. The semantic transmitter emits
//! unit-power latents, so an SNR in dB maps directly onto a per-dimension
//! noise variance of `1 / db_to_linear(snr_db)`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real-valued channel-domain vector. Elements are always finite and the
/// vector is never empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LatentSignal {
    values: Vec<f64>,
}

impl LatentSignal {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Degenerate("empty signal"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signal"));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "signal dimension must be positive");
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }

    pub fn power(&self) -> f64 {
        measure_power(self)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add(&self, other: &LatentSignal) -> Result<LatentSignal> {
        self.check_dim(other)?;
        LatentSignal::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &LatentSignal) -> Result<LatentSignal> {
        self.check_dim(other)?;
        LatentSignal::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn scale(&self, factor: f64) -> Result<LatentSignal> {
        LatentSignal::new(self.values.iter().map(|v| v * factor).collect())
    }

    pub fn check_dim(&self, other: &LatentSignal) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for LatentSignal {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        LatentSignal::new(values)
    }
}

impl From<LatentSignal> for Vec<f64> {
    fn from(s: LatentSignal) -> Self {
        s.values
    }
}

/// Legitimate-link operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub snr_db: f64,
    pub seed: u64,
}

impl ChannelSpec {
    pub fn new(snr_db: f64, seed: u64) -> Result<Self> {
        if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
            return Err(Error::InvalidParameter(format!("snr_db = {snr_db}")));
        }
        Ok(Self { snr_db, seed })
    }

    /// Per-dimension noise variance for a unit-power transmitter.
    pub fn noise_power(&self) -> f64 {
        1.0 / db_to_linear(self.snr_db)
    }
}

/// Seeded random stream. Identical `(seed, stream_id)` pairs reproduce
/// identical draw sequences; distinct stream ids are independent.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    /// Stream whose id is derived from a stable hash of `tag` and `index`.
    pub fn derived(seed: u64, tag: &str, index: u64) -> Self {
        Self::new(seed, stream_key(tag, index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn gaussian_vec(&mut self, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.gaussian()).collect()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// FNV-1a over the tag bytes followed by the little-endian index. Stable
/// across platforms and compiler versions, unlike `DefaultHasher`.
pub fn stream_key(tag: &str, index: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    tag.as_bytes()
        .iter()
        .chain(index.to_le_bytes().iter())
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Mean-square power `(1/dim) * sum(v^2)`.
pub fn measure_power(s: &LatentSignal) -> f64 {
    s.values.iter().map(|v| v * v).sum::<f64>() / s.dim() as f64
}

/// Rescales `s` so that its mean-square power equals `target_power`.
pub fn normalize_power(s: &LatentSignal, target_power: f64) -> Result<LatentSignal> {
    if !(target_power > 0.0) || !target_power.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "target power must be positive, got {target_power}"
        )));
    }
    let p = measure_power(s);
    if p <= 0.0 {
        return Err(Error::Degenerate("zero-power signal cannot be normalized"));
    }
    s.scale((target_power / p).sqrt())
}

pub fn db_to_linear(x_db: f64) -> f64 {
    10f64.powf(x_db / 10.0)
}

pub fn linear_to_db(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "linear_to_db needs a positive value, got {x}"
        )));
    }
    Ok(10.0 * x.log10())
}

/// Adds white Gaussian noise at `snr_db` relative to the measured power of
/// `s`. `snr_db = +inf` disables the noise.
pub fn awgn(s: &LatentSignal, snr_db: f64, rng: &mut RngStream) -> Result<LatentSignal> {
    if snr_db.is_nan() {
        return Err(Error::InvalidParameter("snr_db is NaN".into()));
    }
    let p = measure_power(s);
    if p <= 0.0 {
        return Err(Error::Degenerate("awgn on a zero-power signal"));
    }
    if snr_db == f64::INFINITY {
        return Ok(s.clone());
    }
    let sigma = (p / db_to_linear(snr_db)).sqrt();
    add_white_noise(s, sigma * sigma, rng)
}

/// Adds i.i.d. zero-mean Gaussian noise with the given per-dimension
/// variance, independent of the signal power.
pub fn add_white_noise(
    s: &LatentSignal,
    variance: f64,
    rng: &mut RngStream,
) -> Result<LatentSignal> {
    if !(variance >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise variance must be non-negative, got {variance}"
        )));
    }
    let sigma = variance.sqrt();
    LatentSignal::new(
        s.values
            .iter()
            .map(|v| v + sigma * rng.gaussian())
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(v: &[f64]) -> LatentSignal {
        LatentSignal::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_empty_and_nonfinite() {
        assert!(LatentSignal::new(vec![]).is_err());
        assert!(LatentSignal::new(vec![1.0, f64::NAN]).is_err());
        assert!(LatentSignal::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn power_examples() {
        assert_eq!(measure_power(&LatentSignal::zeros(64)), 0.0);
        assert_eq!(measure_power(&sig(&[1.0, 1.0, 1.0, 1.0])), 1.0);
        let mut rng = RngStream::new(7, 0);
        let g = LatentSignal::new((0..100_000).map(|_| 2.0 * rng.gaussian()).collect()).unwrap();
        let p = measure_power(&g);
        assert!((p - 4.0).abs() < 0.2, "power {p}");
    }

    #[test]
    fn normalize_examples() {
        let a = normalize_power(&sig(&[2.0, 0.0, 0.0, 0.0]), 1.0).unwrap();
        assert_eq!(a.values(), &[2.0, 0.0, 0.0, 0.0]);
        let b = normalize_power(&sig(&[1.0; 4]), 4.0).unwrap();
        assert_eq!(b.values(), &[2.0; 4]);
        let c = normalize_power(&sig(&[3.0, 4.0]), 1.0).unwrap();
        let k = (2.0f64 / 25.0).sqrt();
        assert!((c.values()[0] - 3.0 * k).abs() < 1e-12);
        assert!((c.values()[1] - 4.0 * k).abs() < 1e-12);
        assert!(matches!(
            normalize_power(&LatentSignal::zeros(8), 1.0),
            Err(Error::Degenerate(_))
        ));
        assert!(normalize_power(&sig(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn decibel_examples() {
        assert_eq!(db_to_linear(0.0), 1.0);
        assert!((db_to_linear(40.0) - 1e4).abs() < 1e-8);
        assert!((db_to_linear(-10.0) - 0.1).abs() < 1e-15);
        assert!(linear_to_db(0.0).is_err());
        assert!(linear_to_db(-1.0).is_err());
        assert!((linear_to_db(1e4).unwrap() - 40.0).abs() < 1e-12);
    }

    #[test]
    fn awgn_examples() {
        let s = sig(&[1.0, -1.0, 1.0, -1.0]);
        let mut rng = RngStream::new(1, 1);
        assert_eq!(awgn(&s, f64::INFINITY, &mut rng).unwrap(), s);

        let unit = LatentSignal::new(vec![1.0; 100_000]).unwrap();
        let y = awgn(&unit, 0.0, &mut RngStream::new(3, 9)).unwrap();
        let noise = y.sub(&unit).unwrap();
        assert!((measure_power(&noise) - 1.0).abs() < 0.05);

        let y1 = awgn(&s, 3.0, &mut RngStream::new(5, 2)).unwrap();
        let y2 = awgn(&s, 3.0, &mut RngStream::new(5, 2)).unwrap();
        assert_eq!(y1, y2);

        assert!(awgn(&LatentSignal::zeros(4), 0.0, &mut rng).is_err());
    }

    #[test]
    fn stream_ids_are_independent() {
        let a = RngStream::new(1, 0).gaussian_vec(8);
        let b = RngStream::new(1, 1).gaussian_vec(8);
        assert_ne!(a, b);
        assert_ne!(stream_key("bob", 0), stream_key("eve", 0));
        assert_ne!(stream_key("bob", 0), stream_key("bob", 1));
    }
}
