//! Bob's anti-jamming chain: estimate the interference power, identify the
//! jamming type from expert features, cancel high-power jamming by
//! reconstruct-and-subtract, then hand the residual to the diffusion
//! denoiser.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::diffusion::{receive_and_denoise_batch, DenoiserModel};
use crate::error::{Error, Result};
use crate::signal::{linear_to_db, measure_power, LatentSignal};

pub const MIN_FEATURE_DIM: usize = 64;
const JSR_FLOOR: f64 = 1e-6;
const WELCH_SEGMENT: usize = 16;
const WELCH_HOP: usize = 8;
const ZERO_PAD: usize = 8;
const PULSE_THRESHOLD_RMS: f64 = 5.0;
const SMOOTH_HALF_WIDTH: usize = 2;

/// Decision thresholds of the identification tree.
pub const JSR_BRANCH_DB: f64 = 0.0;
pub const CW_DOMINANCE: f64 = 0.8;
pub const NOISE_FLATNESS: f64 = 0.8;
pub const PULSE_PAPR: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JammingFeatures {
    pub estimated_jsr_db: f64,
    pub papr: f64,
    pub spectral_flatness: f64,
    pub dominant_bin_fraction: f64,
    pub fourth_order_cumulant: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    HighPower,
    LowPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentifiedKind {
    Pulse,
    Cw,
    Noise,
    Sweep,
    AdversarialOrNone,
}

impl IdentifiedKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pulse => "pulse",
            Self::Cw => "cw",
            Self::Noise => "noise",
            Self::Sweep => "sweep",
            Self::AdversarialOrNone => "adversarial_or_none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub branch: Branch,
    pub kind: IdentifiedKind,
    pub features: JammingFeatures,
}

/// Interference power above the unit signal and the known noise floor, in
/// dB, floored at -60 dB.
pub fn estimate_jsr(y: &LatentSignal, noise_power: f64) -> Result<f64> {
    check_noise(noise_power)?;
    linear_to_db(interference_power(y, noise_power).max(JSR_FLOOR))
}

fn interference_power(y: &LatentSignal, noise_power: f64) -> f64 {
    measure_power(y) - 1.0 - noise_power
}

fn check_noise(noise_power: f64) -> Result<()> {
    if !(noise_power >= 0.0 && noise_power.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise power {noise_power} must be non-negative")));
    }
    Ok(())
}

fn fft(buf: &mut [Complex<f64>]) {
    FftPlanner::new().plan_fft_forward(buf.len()).process(buf);
}

fn ifft(buf: &mut [Complex<f64>]) {
    FftPlanner::new().plan_fft_inverse(buf.len()).process(buf);
    let n = buf.len() as f64;
    buf.iter_mut().for_each(|c| *c /= n);
}

fn demean(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - m).collect()
}

/// Peak-to-average power ratio.
pub fn papr(v: &[f64]) -> f64 {
    let mean = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    if mean == 0.0 {
        return 1.0;
    }
    v.iter().map(|x| x * x).fold(0.0, f64::max) / mean
}

/// Welch-averaged one-sided power spectrum of the mean-removed input, DC
/// excluded. Inputs shorter than one segment use a single full-length
/// periodogram.
pub fn welch_spectrum(v: &[f64]) -> Vec<f64> {
    let x = demean(v);
    let seg = if x.len() >= WELCH_SEGMENT { WELCH_SEGMENT } else { x.len() };
    let window: Vec<f64> = (0..seg)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / seg as f64).cos())
        .collect();
    let mut psd = vec![0.0; seg / 2];
    let mut count = 0;
    let mut start = 0;
    while start + seg <= x.len() {
        let mut buf: Vec<Complex<f64>> = (0..seg).map(|i| Complex::new(x[start + i] * window[i], 0.0)).collect();
        fft(&mut buf);
        for (k, p) in psd.iter_mut().enumerate() {
            *p += buf[k + 1].norm_sqr();
        }
        count += 1;
        start += WELCH_HOP;
    }
    psd.iter_mut().for_each(|p| *p /= count as f64);
    psd
}

/// Geometric over arithmetic mean; 1 for a flat spectrum.
pub fn spectral_flatness(psd: &[f64]) -> f64 {
    let n = psd.len() as f64;
    let arith = psd.iter().sum::<f64>() / n;
    if arith <= 0.0 {
        return 0.0;
    }
    if psd.iter().any(|&p| p <= 0.0) {
        return 0.0;
    }
    let geo = (psd.iter().map(|p| p.ln()).sum::<f64>() / n).exp();
    (geo / arith).clamp(0.0, 1.0)
}

/// Share of energy in the strongest spectral line of the mean-removed
/// input, read off an 8x zero-padded transform so off-grid tones are not
/// split across bins. A pure tone scores 1.
pub fn dominant_bin_fraction(v: &[f64]) -> f64 {
    let x = demean(v);
    let energy: f64 = x.iter().map(|a| a * a).sum();
    if energy == 0.0 {
        return 0.0;
    }
    let n = x.len();
    let mut buf = vec![Complex::new(0.0, 0.0); n * ZERO_PAD];
    buf.iter_mut().zip(&x).for_each(|(b, &a)| b.re = a);
    fft(&mut buf);
    let peak = buf[..=buf.len() / 2].iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
    (peak / (n as f64 / 2.0 * energy)).clamp(0.0, 1.0)
}

/// Excess kurtosis `m4 / m2^2 - 3`; zero for Gaussian samples.
pub fn fourth_order_cumulant(v: &[f64]) -> f64 {
    let x = demean(v);
    let n = x.len() as f64;
    let m2 = x.iter().map(|a| a * a).sum::<f64>() / n;
    if m2 == 0.0 {
        return 0.0;
    }
    let m4 = x.iter().map(|a| a.powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

pub fn extract_features(y: &LatentSignal, noise_power: f64) -> Result<JammingFeatures> {
    if y.dim() < MIN_FEATURE_DIM {
        return Err(Error::InvalidParameter(format!(
            "feature extraction needs at least {MIN_FEATURE_DIM} samples, got {}",
            y.dim()
        )));
    }
    let v = y.values();
    Ok(JammingFeatures {
        estimated_jsr_db: estimate_jsr(y, noise_power)?,
        papr: papr(v),
        spectral_flatness: spectral_flatness(&welch_spectrum(v)),
        dominant_bin_fraction: dominant_bin_fraction(v),
        fourth_order_cumulant: fourth_order_cumulant(v),
    })
}

/// Fixed decision tree over the features of a high-power input.
pub fn classify_high_power(f: &JammingFeatures) -> IdentifiedKind {
    if f.dominant_bin_fraction >= CW_DOMINANCE {
        IdentifiedKind::Cw
    } else if f.spectral_flatness >= NOISE_FLATNESS {
        IdentifiedKind::Noise
    } else if f.papr >= PULSE_PAPR {
        IdentifiedKind::Pulse
    } else {
        IdentifiedKind::Sweep
    }
}

pub fn identify_jamming(y: &LatentSignal, noise_power: f64) -> Result<IdentificationResult> {
    let features = extract_features(y, noise_power)?;
    if features.estimated_jsr_db > JSR_BRANCH_DB {
        Ok(IdentificationResult {
            branch: Branch::HighPower,
            kind: classify_high_power(&features),
            features,
        })
    } else {
        Ok(IdentificationResult {
            branch: Branch::LowPower,
            kind: IdentifiedKind::AdversarialOrNone,
            features,
        })
    }
}

fn cancel_pulse(v: &[f64], noise_power: f64) -> Vec<f64> {
    let threshold = PULSE_THRESHOLD_RMS * (1.0 + noise_power).sqrt();
    let hits: Vec<usize> = (0..v.len()).filter(|&i| v[i].abs() > threshold).collect();
    let mut out = v.to_vec();
    if hits.is_empty() {
        return out;
    }
    let amplitude = hits.iter().map(|&i| v[i]).sum::<f64>() / hits.len() as f64;
    for &i in &hits {
        out[i] -= amplitude;
    }
    out
}

/// Least-squares fit of `a cos(2 pi f i) + b sin(2 pi f i)` to `v`: the
/// coefficients and the energy the fit explains.
fn tone_fit(v: &[f64], f: f64) -> (f64, f64, f64) {
    let w = 2.0 * std::f64::consts::PI * f;
    let (mut cc, mut ss, mut cs, mut yc, mut ys) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &y) in v.iter().enumerate() {
        let (s, c) = (w * i as f64).sin_cos();
        cc += c * c;
        ss += s * s;
        cs += c * s;
        yc += y * c;
        ys += y * s;
    }
    let det = cc * ss - cs * cs;
    let (a, b) = if det > 1e-9 * cc.max(1.0) * ss.max(1.0) {
        ((yc * ss - ys * cs) / det, (ys * cc - yc * cs) / det)
    } else if cc > 0.0 {
        // at f = 0 or 1/2 the sine column vanishes
        (yc / cc, 0.0)
    } else {
        (0.0, 0.0)
    };
    (a, b, a * yc + b * ys)
}

/// Frequency of the strongest tone: zero-padded transform peak, refined by
/// a golden-section search of the least-squares fit energy over the
/// neighbouring bins.
pub fn estimate_tone_frequency(v: &[f64]) -> f64 {
    let n = v.len();
    let len = n * ZERO_PAD;
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    buf.iter_mut().zip(v).for_each(|(b, &a)| b.re = a);
    fft(&mut buf);
    let k = buf[..=len / 2]
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, c)| if c.norm_sqr() > b.1 { (i, c.norm_sqr()) } else { b })
        .0;
    let step = 1.0 / len as f64;
    let (mut a, mut b) = (((k as f64 - 1.0) * step).max(0.0), ((k as f64 + 1.0) * step).min(0.5));
    let energy = |f: f64| tone_fit(v, f).2;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (energy(c), energy(d));
    for _ in 0..60 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = energy(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = energy(d);
        }
    }
    (a + b) / 2.0
}

fn cancel_cw(v: &[f64]) -> Vec<f64> {
    let f = estimate_tone_frequency(v);
    let (a, b, _) = tone_fit(v, f);
    let w = 2.0 * std::f64::consts::PI * f;
    v.iter()
        .enumerate()
        .map(|(i, &y)| {
            let (s, c) = (w * i as f64).sin_cos();
            y - a * c - b * s
        })
        .collect()
}

/// Spectral subtraction: the interference spectrum is the locally smoothed
/// periodogram minus the expected signal-plus-noise level, and each bin's
/// magnitude is reduced by it.
fn cancel_spectral(v: &[f64], noise_power: f64) -> Vec<f64> {
    let n = v.len();
    let mut buf: Vec<Complex<f64>> = v.iter().map(|&a| Complex::new(a, 0.0)).collect();
    fft(&mut buf);
    let power: Vec<f64> = buf.iter().map(|c| c.norm_sqr()).collect();
    let floor = n as f64 * (1.0 + noise_power);
    for k in 0..n {
        // circular smoothing keeps the conjugate-symmetric bins paired
        let mut acc = 0.0;
        for o in 0..=2 * SMOOTH_HALF_WIDTH {
            acc += power[(k + n + o - SMOOTH_HALF_WIDTH) % n];
        }
        let interference = (acc / (2 * SMOOTH_HALF_WIDTH + 1) as f64 - floor).max(0.0);
        let gain = if power[k] > 0.0 {
            (1.0 - interference / power[k]).max(0.0).sqrt()
        } else {
            1.0
        };
        buf[k] *= gain;
    }
    ifft(&mut buf);
    buf.iter().map(|c| c.re).collect()
}

/// Reconstructs the jamming waveform of the identified kind and subtracts
/// it.
pub fn coarse_cancel(y: &LatentSignal, kind: IdentifiedKind, noise_power: f64) -> Result<LatentSignal> {
    check_noise(noise_power)?;
    let v = y.values();
    let out = match kind {
        IdentifiedKind::Pulse => cancel_pulse(v, noise_power),
        IdentifiedKind::Cw => cancel_cw(v),
        IdentifiedKind::Noise | IdentifiedKind::Sweep => cancel_spectral(v, noise_power),
        IdentifiedKind::AdversarialOrNone => {
            return Err(Error::InvalidParameter(
                "coarse cancellation needs a high-power jamming kind".into(),
            ))
        }
    };
    LatentSignal::new(out)
}

/// Cancellation with the true jamming waveform supplied.
pub fn coarse_cancel_genie(y: &LatentSignal, jamming: &LatentSignal) -> Result<LatentSignal> {
    y.sub(jamming)
}

/// SINR seen by the denoiser: the unit signal against the known noise plus
/// whatever interference power remains above it.
pub fn residual_sinr(y: &LatentSignal, noise_power: f64) -> Result<f64> {
    check_noise(noise_power)?;
    let total = noise_power + interference_power(y, noise_power).max(0.0);
    Ok(if total > 0.0 { 1.0 / total } else { f64::INFINITY })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefenseOutput {
    pub output: LatentSignal,
    pub identification: IdentificationResult,
    pub residual_sinr: f64,
}

/// Full receiver chain for a batch: identification, coarse cancellation on
/// the high-power branch, then SINR-matched diffusion denoising.
pub fn defend_batch(ys: &[LatentSignal], noise_power: f64, m: &DenoiserModel) -> Result<Vec<DefenseOutput>> {
    let mut ids = Vec::with_capacity(ys.len());
    let mut cleaned = Vec::with_capacity(ys.len());
    let mut sinrs = Vec::with_capacity(ys.len());
    for y in ys {
        let id = identify_jamming(y, noise_power)?;
        let c = match id.branch {
            Branch::HighPower => coarse_cancel(y, id.kind, noise_power)?,
            Branch::LowPower => y.clone(),
        };
        sinrs.push(residual_sinr(&c, noise_power)?);
        ids.push(id);
        cleaned.push(c);
    }
    let outputs = receive_and_denoise_batch(&cleaned, &sinrs, m)?;
    Ok(outputs
        .into_iter()
        .zip(ids)
        .zip(sinrs)
        .map(|((output, identification), residual_sinr)| DefenseOutput {
            output,
            identification,
            residual_sinr,
        })
        .collect())
}

pub fn defend(y: &LatentSignal, noise_power: f64, m: &DenoiserModel) -> Result<LatentSignal> {
    Ok(defend_batch(std::slice::from_ref(y), noise_power, m)?.remove(0).output)
}
