use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::schedule::{estimate_timestep, VarianceSchedule};
use crate::error::{Error, Result};
use crate::nn::{self, Adam, Dense, Grads, NamedArray};
use crate::signal::{LatentSignal, RngStream};
use crate::training::{TrainConfig, TrainReport};

const MAX_PERIOD: f32 = 10_000.0;
const VALIDATION_CAP: usize = 1024;

/// Shape of the noise-prediction network: an input projection of
/// `[x, embed(t)]`, `blocks` residual SiLU blocks of width `hidden`, and a
/// zero-initialised output projection back to `latent_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserArch {
    pub latent_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub time_embed: usize,
    /// Clamp on each coordinate of the predicted clean latent during reverse
    /// steps.
    pub x0_clip: f64,
}

impl Default for DenoiserArch {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            hidden: 256,
            blocks: 2,
            time_embed: 32,
            x0_clip: 5.0,
        }
    }
}

impl DenoiserArch {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidParameter("denoiser widths must be positive".into()));
        }
        if self.time_embed == 0 || self.time_embed % 2 != 0 {
            return Err(Error::InvalidParameter("time_embed must be even and positive".into()));
        }
        if !(self.x0_clip > 0.0) {
            return Err(Error::InvalidParameter("x0_clip must be positive".into()));
        }
        Ok(())
    }
}

/// Reverse-process variant.
#[derive(Debug)]
pub enum Sampler<'a> {
    /// Zero posterior noise; output is a pure function of the input.
    Deterministic,
    /// Posterior noise drawn from the given stream at every step but the last.
    Ancestral(&'a mut RngStream),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    arch: DenoiserArch,
    schedule: VarianceSchedule,
    input: Dense,
    blocks: Vec<Dense>,
    output: Dense,
    train_seed: u64,
}

struct Cache {
    xin: Array2<f32>,
    hs: Vec<Array2<f32>>,
    acts: Vec<Array2<f32>>,
}

fn embed_into(row: &mut [f32], t: usize) {
    let half = row.len() / 2;
    for i in 0..half {
        let freq = (-(MAX_PERIOD.ln()) * i as f32 / half as f32).exp();
        let angle = t as f32 * freq;
        row[i] = angle.sin();
        row[half + i] = angle.cos();
    }
}

impl DenoiserModel {
    pub fn init(arch: DenoiserArch, schedule: VarianceSchedule, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = Dense::new(&mut rng, arch.latent_dim + arch.time_embed, arch.hidden, 1.0);
        let blocks = (0..arch.blocks)
            .map(|_| Dense::new(&mut rng, arch.hidden, arch.hidden, 0.5))
            .collect();
        Ok(Self {
            arch,
            schedule,
            input,
            blocks,
            output: Dense::zeros(arch.hidden, arch.latent_dim),
            train_seed: seed,
        })
    }

    pub fn arch(&self) -> DenoiserArch {
        self.arch
    }

    pub fn schedule(&self) -> &VarianceSchedule {
        &self.schedule
    }

    pub fn train_seed(&self) -> u64 {
        self.train_seed
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn network_input(&self, x: &Array2<f32>, ts: &[usize]) -> Array2<f32> {
        let d = self.arch.latent_dim;
        let mut xin = Array2::zeros((x.nrows(), d + self.arch.time_embed));
        xin.slice_mut(s![.., ..d]).assign(x);
        for (i, &t) in ts.iter().enumerate() {
            let mut row = xin.row_mut(i);
            let tail = row.as_slice_mut().expect("standard layout");
            embed_into(&mut tail[d..], t);
        }
        xin
    }

    fn forward(&self, x: &Array2<f32>, ts: &[usize]) -> (Array2<f32>, Cache) {
        let xin = self.network_input(x, ts);
        let mut h = self.input.forward(&xin);
        let mut hs = Vec::with_capacity(self.blocks.len() + 1);
        let mut acts = Vec::with_capacity(self.blocks.len() + 1);
        for block in &self.blocks {
            let a = nn::silu(&h);
            let next = &h + &block.forward(&a);
            hs.push(h);
            acts.push(a);
            h = next;
        }
        let a = nn::silu(&h);
        let eps = self.output.forward(&a);
        hs.push(h);
        acts.push(a);
        (eps, Cache { xin, hs, acts })
    }

    fn backward(&self, cache: &Cache, g_eps: &Array2<f32>) -> Grads {
        let nb = self.blocks.len();
        let mut g_out = Grads::default();
        let g_a = self.output.backward(&cache.acts[nb], g_eps, &mut g_out);
        let mut g_h = nn::silu_backward(&cache.hs[nb], &g_a);
        let mut g_blocks = vec![Grads::default(); nb];
        for k in (0..nb).rev() {
            let g_a = self.blocks[k].backward(&cache.acts[k], &g_h, &mut g_blocks[k]);
            g_h = g_h + nn::silu_backward(&cache.hs[k], &g_a);
        }
        let mut grads = Grads::default();
        let _ = self.input.backward(&cache.xin, &g_h, &mut grads);
        for g in g_blocks {
            grads.extend(g);
        }
        grads.extend(g_out);
        grads
    }

    fn params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut p = self.input.params_mut();
        for b in &mut self.blocks {
            p.extend(b.params_mut());
        }
        p.extend(self.output.params_mut());
        p
    }

    /// Predicted noise for each row of `x` at its time-step.
    pub fn predict_noise(&self, x: &Array2<f32>, ts: &[usize]) -> Result<Array2<f32>> {
        if x.ncols() != self.arch.latent_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.latent_dim,
                actual: x.ncols(),
            });
        }
        if ts.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                actual: ts.len(),
            });
        }
        for &t in ts {
            self.schedule.beta(t)?;
        }
        Ok(self.forward(x, ts).0)
    }

    pub fn export(&self) -> Vec<NamedArray> {
        let mut out = Vec::new();
        self.input.export("input", &mut out);
        for (k, b) in self.blocks.iter().enumerate() {
            b.export(&format!("block{k}"), &mut out);
        }
        self.output.export("output", &mut out);
        out
    }

    pub fn import(
        arch: DenoiserArch,
        schedule: VarianceSchedule,
        train_seed: u64,
        mut arrays: Vec<NamedArray>,
    ) -> Result<Self> {
        arch.validate()?;
        let a = &mut arrays;
        let input = Dense::import("input", arch.latent_dim + arch.time_embed, arch.hidden, a)?;
        let blocks = (0..arch.blocks)
            .map(|k| Dense::import(&format!("block{k}"), arch.hidden, arch.hidden, a))
            .collect::<Result<Vec<_>>>()?;
        let output = Dense::import("output", arch.hidden, arch.latent_dim, a)?;
        if let Some(extra) = arrays.first() {
            return Err(Error::Checkpoint(format!("unexpected array `{}`", extra.name)));
        }
        Ok(Self {
            arch,
            schedule,
            input,
            blocks,
            output,
            train_seed,
        })
    }
}

fn latents_to_rows(latents: &[LatentSignal], dim: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((latents.len(), dim));
    for (mut row, z) in out.axis_iter_mut(Axis(0)).zip(latents) {
        if z.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: z.dim(),
            });
        }
        row.iter_mut().zip(z.values()).for_each(|(r, &v)| *r = v);
    }
    Ok(out)
}

struct NoisyBatch {
    x: Array2<f32>,
    ts: Vec<usize>,
    eps: Array2<f32>,
}

fn diffuse_rows<R: Rng>(x0: &Array2<f32>, sch: &VarianceSchedule, rng: &mut R) -> NoisyBatch {
    let steps = sch.steps();
    let ts: Vec<usize> = (0..x0.nrows()).map(|_| rng.gen_range(1..=steps)).collect();
    let eps = Array2::from_shape_simple_fn(x0.raw_dim(), || rng.sample::<f32, _>(StandardNormal));
    let mut x = x0.clone();
    for (i, &t) in ts.iter().enumerate() {
        let a = sch.alpha_bars()[t - 1];
        let (sa, sn) = (a.sqrt() as f32, (1.0 - a).sqrt() as f32);
        let mut row = x.row_mut(i);
        row.zip_mut_with(&eps.row(i), |v, &e| *v = sa * *v + sn * e);
    }
    NoisyBatch { x, ts, eps }
}

/// Fits the noise-prediction network on clean latents with time-steps drawn
/// uniformly from the schedule. Up to a tenth of the latents (at most 1024)
/// are held out as a validation set with frozen time-steps and noise.
pub fn train_denoiser(
    latents: &[LatentSignal],
    sch: &VarianceSchedule,
    arch: DenoiserArch,
    cfg: &TrainConfig,
) -> Result<(DenoiserModel, TrainReport)> {
    if latents.is_empty() {
        return Err(Error::Degenerate("empty latent set"));
    }
    cfg.validate()?;
    let mut model = DenoiserModel::init(arch, sch.clone(), cfg.seed)?;
    let all = latents_to_rows(latents, arch.latent_dim)?.mapv(|v| v as f32);
    let held = if latents.len() >= 20 {
        (latents.len() / 10).min(VALIDATION_CAP)
    } else {
        0
    };
    let train = all.slice(s![..all.nrows() - held, ..]).to_owned();
    let val_x0 = if held > 0 {
        all.slice(s![all.nrows() - held.., ..]).to_owned()
    } else {
        train.clone()
    };
    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    val_rng.set_stream(3);
    let val = diffuse_rows(&val_x0, sch, &mut val_rng);
    let val_loss = |m: &DenoiserModel| nn::mse_loss(&m.forward(&val.x, &val.ts).0, &val.eps).0;
    let initial_loss = val_loss(&model);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Adam::new(cfg.learning_rate as f32);
    let mut order: Vec<usize> = (0..train.nrows()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let x0 = train.select(Axis(0), idx);
            let batch = diffuse_rows(&x0, sch, &mut rng);
            let (pred, cache) = model.forward(&batch.x, &batch.ts);
            let (loss, g) = nn::mse_loss(&pred, &batch.eps);
            total += loss * idx.len() as f64;
            let grads = model.backward(&cache, &g);
            opt.step(model.params_mut(), &grads);
        }
        epoch_losses.push(total / train.nrows() as f64);
    }
    let report = TrainReport {
        initial_loss,
        final_loss: val_loss(&model),
        epoch_losses,
    };
    cfg.check_convergence(&report)?;
    Ok((model, report))
}

/// Runs the reverse process on a batch, each row starting at its own
/// time-step. Rows with `t_start = 0` are returned unchanged.
pub fn denoise_batch(
    xs: &[LatentSignal],
    t_starts: &[usize],
    m: &DenoiserModel,
    mut sampler: Sampler<'_>,
) -> Result<Vec<LatentSignal>> {
    if xs.len() != t_starts.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            actual: t_starts.len(),
        });
    }
    let sch = &m.schedule;
    for &t in t_starts {
        if t > sch.steps() {
            return Err(Error::TimestepOutOfRange { t, max: sch.steps() });
        }
    }
    let mut state = latents_to_rows(xs, m.arch.latent_dim)?;
    let clip = m.arch.x0_clip;
    let t_max = t_starts.iter().copied().max().unwrap_or(0);
    for t in (1..=t_max).rev() {
        let active: Vec<usize> = (0..xs.len()).filter(|&i| t_starts[i] >= t).collect();
        let x = state.select(Axis(0), &active);
        let eps = m.forward(&x.mapv(|v| v as f32), &vec![t; active.len()]).0;
        let ab = sch.alpha_bars()[t - 1];
        let ab_prev = sch.alpha_bar(t - 1)?;
        let beta = sch.betas()[t - 1];
        for (r, &i) in active.iter().enumerate() {
            let mut row = state.row_mut(i);
            for j in 0..row.len() {
                let xt = row[j];
                let x0 = ((xt - (1.0 - ab).sqrt() * f64::from(eps[[r, j]])) / ab.sqrt())
                    .clamp(-clip, clip);
                row[j] = match &mut sampler {
                    Sampler::Deterministic => {
                        let e = (xt - ab.sqrt() * x0) / (1.0 - ab).sqrt();
                        ab_prev.sqrt() * x0 + (1.0 - ab_prev).sqrt() * e
                    }
                    Sampler::Ancestral(rng) => {
                        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
                        let ct = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
                        let var = beta * (1.0 - ab_prev) / (1.0 - ab);
                        let z = if t > 1 { rng.gaussian() } else { 0.0 };
                        c0 * x0 + ct * xt + var.sqrt() * z
                    }
                };
            }
        }
    }
    state
        .axis_iter(Axis(0))
        .map(|r| LatentSignal::new(r.to_vec()))
        .collect()
}

/// Deterministic reverse process from `t_start` down to 1.
pub fn denoise(x_noisy: &LatentSignal, t_start: usize, m: &DenoiserModel) -> Result<LatentSignal> {
    denoise_with(x_noisy, t_start, m, Sampler::Deterministic)
}

pub fn denoise_with(
    x_noisy: &LatentSignal,
    t_start: usize,
    m: &DenoiserModel,
    sampler: Sampler<'_>,
) -> Result<LatentSignal> {
    Ok(denoise_batch(std::slice::from_ref(x_noisy), &[t_start], m, sampler)?.remove(0))
}

/// Maps a channel output `x0 + n` with the given SNR onto the schedule:
/// picks the matching time-step, rescales by `sqrt(alpha_bar(t))`, and runs
/// the deterministic reverse process.
pub fn receive_and_denoise(
    x_received: &LatentSignal,
    observed_snr_linear: f64,
    m: &DenoiserModel,
) -> Result<LatentSignal> {
    Ok(receive_and_denoise_batch(std::slice::from_ref(x_received), &[observed_snr_linear], m)?.remove(0))
}

pub fn receive_and_denoise_batch(
    xs: &[LatentSignal],
    observed_snr_linear: &[f64],
    m: &DenoiserModel,
) -> Result<Vec<LatentSignal>> {
    if xs.len() != observed_snr_linear.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            actual: observed_snr_linear.len(),
        });
    }
    let mut ts = Vec::with_capacity(xs.len());
    let mut scaled = Vec::with_capacity(xs.len());
    for (x, &snr) in xs.iter().zip(observed_snr_linear) {
        let t = estimate_timestep(snr, &m.schedule)?;
        scaled.push(x.scale(m.schedule.alpha_bars()[t - 1].sqrt())?);
        ts.push(t);
    }
    denoise_batch(&scaled, &ts, m, Sampler::Deterministic)
}

/// Receiver-side SNR estimate for a unit-power transmission: the excess of
/// received power over 1 is attributed to noise and interference.
pub fn blind_snr(y: &LatentSignal) -> f64 {
    1.0 / (y.power() - 1.0).max(1e-6)
}
