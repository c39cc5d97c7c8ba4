//! Threat signals added to the channel input: four high-power jamming
//! waveforms and gradient-based adversarial perturbations, each scaled to an
//! exact jamming-to-signal power ratio against a unit-power transmission.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::CodecModel;
use crate::error::{Error, Result};
use crate::signal::{db_to_linear, measure_power, normalize_power, LatentSignal, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JammingKind {
    Pulse,
    Cw,
    Noise,
    Sweep,
    Adversarial,
}

impl JammingKind {
    pub const HIGH_POWER: [JammingKind; 4] = [Self::Pulse, Self::Cw, Self::Noise, Self::Sweep];

    pub fn name(self) -> &'static str {
        match self {
            Self::Pulse => "pulse",
            Self::Cw => "cw",
            Self::Noise => "noise",
            Self::Sweep => "sweep",
            Self::Adversarial => "adversarial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    Fgsm,
    Bim,
    Pgd,
}

/// Waveform family and its shape parameters. Frequencies are normalised
/// (cycles per sample) and lie in `[0, 0.5]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Waveform {
    /// On-off keyed constant pulse train with a random start offset.
    /// `period = None` uses a quarter of the signal length.
    Pulse { duty: f64, period: Option<usize> },
    Cw { freq: f64, phase: f64 },
    Noise,
    /// Linear frequency sweep restarted every `length` samples (`None`: once
    /// over the whole signal), with a random initial phase.
    Sweep {
        f_start: f64,
        f_end: f64,
        length: Option<usize>,
    },
    /// `step_fraction` is the per-iteration step as a fraction of the power
    /// ball radius.
    Adversarial {
        method: AttackMethod,
        iterations: usize,
        step_fraction: f64,
    },
}

impl Waveform {
    pub fn kind(&self) -> JammingKind {
        match self {
            Self::Pulse { .. } => JammingKind::Pulse,
            Self::Cw { .. } => JammingKind::Cw,
            Self::Noise => JammingKind::Noise,
            Self::Sweep { .. } => JammingKind::Sweep,
            Self::Adversarial { .. } => JammingKind::Adversarial,
        }
    }

    pub fn default_for(kind: JammingKind) -> Self {
        match kind {
            JammingKind::Pulse => Self::Pulse {
                duty: 0.25,
                period: None,
            },
            JammingKind::Cw => Self::Cw {
                freq: 0.15,
                phase: 0.0,
            },
            JammingKind::Noise => Self::Noise,
            JammingKind::Sweep => Self::Sweep {
                f_start: 0.05,
                f_end: 0.45,
                length: None,
            },
            JammingKind::Adversarial => Self::Adversarial {
                method: AttackMethod::Pgd,
                iterations: 20,
                step_fraction: 0.125,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JammerProfile {
    #[serde(flatten)]
    pub waveform: Waveform,
    pub jsr_db: f64,
    #[serde(default)]
    pub seed: u64,
}

fn check_freq(name: &str, f: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&f) {
        return Err(Error::InvalidParameter(format!("{name} {f} outside [0, 0.5]")));
    }
    Ok(())
}

impl JammerProfile {
    pub fn new(waveform: Waveform, jsr_db: f64, seed: u64) -> Result<Self> {
        let p = Self {
            waveform,
            jsr_db,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn kind(&self) -> JammingKind {
        self.waveform.kind()
    }

    /// Target interference power relative to the unit signal power.
    pub fn power(&self) -> f64 {
        db_to_linear(self.jsr_db)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.jsr_db.is_finite() {
            return Err(Error::InvalidParameter("jsr_db must be finite".into()));
        }
        match self.waveform {
            Waveform::Pulse { duty, period } => {
                if !(duty > 0.0 && duty <= 1.0) {
                    return Err(Error::InvalidParameter(format!("duty cycle {duty} outside (0, 1]")));
                }
                if period == Some(0) {
                    return Err(Error::InvalidParameter("pulse period must be positive".into()));
                }
            }
            Waveform::Cw { freq, phase } => {
                check_freq("cw frequency", freq)?;
                if !phase.is_finite() {
                    return Err(Error::InvalidParameter("cw phase must be finite".into()));
                }
            }
            Waveform::Noise => {}
            Waveform::Sweep {
                f_start,
                f_end,
                length,
            } => {
                check_freq("sweep start", f_start)?;
                check_freq("sweep end", f_end)?;
                if length == Some(0) {
                    return Err(Error::InvalidParameter("sweep length must be positive".into()));
                }
            }
            Waveform::Adversarial { step_fraction, .. } => {
                if !(step_fraction > 0.0 && step_fraction.is_finite()) {
                    return Err(Error::InvalidParameter("step_fraction must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// High-power jamming waveform of exact power `db_to_linear(jsr_db)`.
pub fn gen_jamming(p: &JammerProfile, dim: usize, rng: &mut RngStream) -> Result<LatentSignal> {
    p.validate()?;
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    let raw: Vec<f64> = match p.waveform {
        Waveform::Pulse { duty, period } => {
            let period = period.unwrap_or((dim / 4).max(1));
            let on = ((duty * period as f64).ceil() as usize).clamp(1, period);
            let offset = rng.gen_range(0..period);
            (0..dim)
                .map(|i| if (i + period - offset) % period < on { 1.0 } else { 0.0 })
                .collect()
        }
        Waveform::Cw { freq, phase } => (0..dim)
            .map(|i| (2.0 * PI * freq * i as f64 + phase).cos())
            .collect(),
        Waveform::Noise => rng.gaussian_vec(dim),
        Waveform::Sweep {
            f_start,
            f_end,
            length,
        } => {
            let len = length.unwrap_or(dim);
            let phase0 = rng.gen_range(0.0..2.0 * PI);
            let mut phase = phase0;
            (0..dim)
                .map(|i| {
                    let k = i % len;
                    if k == 0 {
                        phase = phase0;
                    }
                    let v = phase.cos();
                    phase += 2.0 * PI * (f_start + (f_end - f_start) * k as f64 / len as f64);
                    v
                })
                .collect()
        }
        Waveform::Adversarial { .. } => {
            return Err(Error::InvalidParameter(
                "adversarial perturbations need a target pipeline; use gen_adversarial".into(),
            ))
        }
    };
    let raw = LatentSignal::new(raw)?;
    if measure_power(&raw) < 1e-12 {
        return Err(Error::Degenerate("jamming waveform vanishes at every sample"));
    }
    normalize_power(&raw, p.power())
}

/// Differentiable map from a batch of channel inputs to per-sample losses
/// the attacker wants to increase.
pub trait AttackObjective {
    fn loss_grad(&self, inputs: &[LatentSignal]) -> Result<(Vec<f64>, Vec<Vec<f64>>)>;
}

/// Bob's reconstruction loss against the clean images.
pub struct ReconstructionObjective<'a> {
    pub codec: &'a CodecModel,
    pub targets: Vec<&'a [f32]>,
}

impl AttackObjective for ReconstructionObjective<'_> {
    fn loss_grad(&self, inputs: &[LatentSignal]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        self.codec.reconstruction_loss_grad(inputs, &self.targets)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub method: AttackMethod,
    pub iterations: usize,
    pub step_fraction: f64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            method: AttackMethod::Pgd,
            iterations: 20,
            step_fraction: 0.125,
        }
    }
}

/// Perturbations plus, per sample, whether the objective's gradient
/// vanished and a random direction was used instead.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub deltas: Vec<LatentSignal>,
    pub zero_gradient: Vec<bool>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn random_direction(dim: usize, rng: &mut RngStream) -> Vec<f64> {
    loop {
        let v = rng.gaussian_vec(dim);
        let n = norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Gradient ascent on `objective` under an L2 power constraint: every
/// returned perturbation has mean-square power exactly `power`.
///
/// `fgsm` takes one signed-gradient step onto the sphere. `bim` and `pgd`
/// iterate normalised-gradient steps of length `step_fraction * radius`,
/// projecting onto the ball after each, and `pgd` starts from a random point
/// inside the ball. The result is rescaled onto the sphere. Zero iterations
/// yield zero perturbations.
pub fn power_constrained_attack<O: AttackObjective + ?Sized>(
    objective: &O,
    x_clean: &[LatentSignal],
    power: f64,
    spec: &AttackSpec,
    rng: &mut RngStream,
) -> Result<AttackOutcome> {
    if !(power >= 0.0 && power.is_finite()) {
        return Err(Error::InvalidParameter(format!("attack power {power} must be non-negative")));
    }
    if !(spec.step_fraction > 0.0 && spec.step_fraction.is_finite()) {
        return Err(Error::InvalidParameter("step_fraction must be positive".into()));
    }
    let n = x_clean.len();
    if spec.iterations == 0 || power == 0.0 || n == 0 {
        return Ok(AttackOutcome {
            deltas: x_clean.iter().map(|x| LatentSignal::zeros(x.dim())).collect(),
            zero_gradient: vec![false; n],
        });
    }
    let dims: Vec<usize> = x_clean.iter().map(|x| x.dim()).collect();
    let radius: Vec<f64> = dims.iter().map(|&d| (power * d as f64).sqrt()).collect();
    let mut delta: Vec<Vec<f64>> = dims.iter().map(|&d| vec![0.0; d]).collect();
    if spec.method == AttackMethod::Pgd {
        for (i, d) in delta.iter_mut().enumerate() {
            let r = radius[i] * rng.gen_range(0.0..1.0f64);
            *d = random_direction(dims[i], rng).into_iter().map(|v| v * r).collect();
        }
    }
    let steps = if spec.method == AttackMethod::Fgsm { 1 } else { spec.iterations };
    let mut saw_gradient = vec![false; n];
    for _ in 0..steps {
        let inputs = x_clean
            .iter()
            .zip(&delta)
            .map(|(x, d)| LatentSignal::new(x.values().iter().zip(d).map(|(a, b)| a + b).collect()))
            .collect::<Result<Vec<_>>>()?;
        let (_, grads) = objective.loss_grad(&inputs)?;
        if grads.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: grads.len(),
            });
        }
        for i in 0..n {
            let g = &grads[i];
            if g.len() != dims[i] {
                return Err(Error::DimensionMismatch {
                    expected: dims[i],
                    actual: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("attack gradient"));
            }
            let dir: Vec<f64> = match spec.method {
                AttackMethod::Fgsm => g.iter().map(|&v| sign(v)).collect(),
                _ => g.clone(),
            };
            let dn = norm(&dir);
            if dn == 0.0 {
                continue;
            }
            saw_gradient[i] = true;
            let step = if spec.method == AttackMethod::Fgsm {
                radius[i]
            } else {
                spec.step_fraction * radius[i]
            };
            for (d, v) in delta[i].iter_mut().zip(&dir) {
                *d += step * v / dn;
            }
            let len = norm(&delta[i]);
            if len > radius[i] {
                delta[i].iter_mut().for_each(|d| *d *= radius[i] / len);
            }
        }
    }
    let mut zero_gradient = vec![false; n];
    let mut deltas = Vec::with_capacity(n);
    for i in 0..n {
        let mut d = std::mem::take(&mut delta[i]);
        if !saw_gradient[i] || norm(&d) == 0.0 {
            zero_gradient[i] = !saw_gradient[i];
            if norm(&d) == 0.0 {
                d = random_direction(dims[i], rng);
            }
        }
        deltas.push(normalize_power(&LatentSignal::new(d)?, power)?);
    }
    Ok(AttackOutcome {
        deltas,
        zero_gradient,
    })
}

/// Adversarial jamming against `objective`, configured by an adversarial
/// profile.
pub fn gen_adversarial<O: AttackObjective + ?Sized>(
    objective: &O,
    x_clean: &[LatentSignal],
    p: &JammerProfile,
    rng: &mut RngStream,
) -> Result<AttackOutcome> {
    p.validate()?;
    let Waveform::Adversarial {
        method,
        iterations,
        step_fraction,
    } = p.waveform
    else {
        return Err(Error::InvalidParameter(format!(
            "profile kind {} is not adversarial",
            p.kind().name()
        )));
    };
    let spec = AttackSpec {
        method,
        iterations,
        step_fraction,
    };
    power_constrained_attack(objective, x_clean, p.power(), &spec, rng)
}

/// Checks that a generated signal carries the profile's power within
/// `rel_tol`.
pub fn power_matches(s: &LatentSignal, p: &JammerProfile, rel_tol: f64) -> bool {
    (measure_power(s) / p.power() - 1.0).abs() <= rel_tol
}
