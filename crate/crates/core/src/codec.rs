//! Semantic transmitter (encoder) and receiver (decoder) for 28x28 image
//! reconstruction.
//!
//! Encoder: two strided convolutions, a dense bottleneck, and a power
//! normalisation layer that pins every latent to unit mean-square power.
//! Decoder: dense expansion, two transposed convolutions, a per-pixel bias
//! and a sigmoid. Training is channel-aware: each example sees AWGN at an
//! SNR drawn uniformly from the configured range.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{mean_image, to_batch, ImageSample, IMAGE_PIXELS, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::nn::{self, Adam, Conv2d, ConvGeom, ConvTranspose2d, Dense, Grads, NamedArray};
use crate::signal::{db_to_linear, LatentSignal};
use crate::training::{TrainConfig, TrainReport};

/// Decoded image, row-major 28x28 in `[0, 1]`.
pub type Image = Vec<f32>;

const KERNEL: usize = 4;
const EVAL_CHUNK: usize = 256;
const MONITOR_SIZE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecArch {
    pub latent_dim: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
}

impl Default for CodecArch {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            conv1_channels: 8,
            conv2_channels: 16,
        }
    }
}

impl CodecArch {
    fn geom1(&self) -> ConvGeom {
        ConvGeom {
            channels: 1,
            height: IMAGE_SIDE,
            width: IMAGE_SIDE,
            kernel: KERNEL,
            stride: 2,
            pad: 1,
        }
    }

    fn geom2(&self) -> ConvGeom {
        ConvGeom {
            channels: self.conv1_channels,
            height: IMAGE_SIDE / 2,
            width: IMAGE_SIDE / 2,
            kernel: KERNEL,
            stride: 2,
            pad: 1,
        }
    }

    fn bottleneck_in(&self) -> usize {
        self.conv2_channels * (IMAGE_SIDE / 4) * (IMAGE_SIDE / 4)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.conv1_channels == 0 || self.conv2_channels == 0 {
            return Err(Error::InvalidParameter("codec widths must be positive".into()));
        }
        Ok(())
    }
}

/// Anything that maps images to channel latents and back. Implemented by
/// [`CodecModel`]; test doubles implement it to isolate metric code.
pub trait SemanticCodec {
    fn latent_dim(&self) -> usize;
    fn encode_batch(&self, images: &[ImageSample]) -> Vec<LatentSignal>;
    fn decode_batch(&self, latents: &[LatentSignal]) -> Result<Vec<Image>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecModel {
    arch: CodecArch,
    conv1: Conv2d,
    conv2: Conv2d,
    bottleneck: Dense,
    expand: Dense,
    up1: ConvTranspose2d,
    up2: ConvTranspose2d,
    pixel_bias: Array1<f32>,
    train_seed: u64,
}

struct EncodeCache {
    c1: nn::ConvCache,
    p1: Array2<f32>,
    c2: nn::ConvCache,
    p2: Array2<f32>,
    a2: Array2<f32>,
    h: Array2<f32>,
    z: Array2<f32>,
}

struct DecodeCache {
    z: Array2<f32>,
    e: Array2<f32>,
    u1: nn::ConvTCache,
    p: Array2<f32>,
    u2: nn::ConvTCache,
    out: Array2<f32>,
}

fn logit(p: f32) -> f32 {
    let p = p.clamp(1e-3, 1.0 - 1e-3);
    (p / (1.0 - p)).ln()
}

/// Scales each row to mean-square power 1. A zero row maps to the constant
/// unit vector.
fn power_normalize_rows(h: &Array2<f32>) -> Array2<f32> {
    let scale = (h.ncols() as f32).sqrt();
    let mut z = h.clone();
    for mut row in z.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v * scale / norm);
        } else {
            row.fill(1.0);
        }
    }
    z
}

/// Backward of `power_normalize_rows`: `c/|h| (g - u (u.g))`, `u = h/|h|`.
fn power_normalize_backward(h: &Array2<f32>, gz: &Array2<f32>) -> Array2<f32> {
    let scale = (h.ncols() as f32).sqrt();
    let mut gh = gz.clone();
    for (mut g, hrow) in gh.axis_iter_mut(Axis(0)).zip(h.axis_iter(Axis(0))) {
        let norm = hrow.dot(&hrow).sqrt();
        if norm == 0.0 {
            g.fill(0.0);
            continue;
        }
        let ug = hrow.dot(&g) / norm;
        let k = scale / norm;
        g.zip_mut_with(&hrow, |gv, &hv| *gv = k * (*gv - hv / norm * ug));
    }
    gh
}

fn latents_to_batch(latents: &[LatentSignal], dim: usize) -> Result<Array2<f32>> {
    let mut out = Array2::zeros((latents.len(), dim));
    for (mut row, z) in out.axis_iter_mut(Axis(0)).zip(latents) {
        if z.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: z.dim(),
            });
        }
        for (r, &v) in row.iter_mut().zip(z.values()) {
            *r = v as f32;
        }
    }
    Ok(out)
}

fn batch_to_latents(z: &Array2<f32>) -> Vec<LatentSignal> {
    z.axis_iter(Axis(0))
        .map(|row| {
            LatentSignal::new(row.iter().map(|&v| f64::from(v)).collect())
                .expect("finite network output")
        })
        .collect()
}

impl CodecModel {
    /// Freshly initialised model. The output bias is set to the logit of
    /// `mean_image` and the last layer starts small, so an untrained decoder
    /// reproduces roughly the mean image.
    pub fn init(arch: CodecArch, mean_image: &[f32], seed: u64) -> Result<Self> {
        arch.validate()?;
        if mean_image.len() != IMAGE_PIXELS {
            return Err(Error::DimensionMismatch {
                expected: IMAGE_PIXELS,
                actual: mean_image.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv1 = Conv2d::new(&mut rng, arch.geom1(), arch.conv1_channels);
        let conv2 = Conv2d::new(&mut rng, arch.geom2(), arch.conv2_channels);
        let mut bottleneck = Dense::new(&mut rng, arch.bottleneck_in(), arch.latent_dim, 1.0);
        // a nonzero bias keeps the all-zero image away from the zero latent
        bottleneck.b = (0..arch.latent_dim)
            .map(|_| rng.gen_range(-0.1f32..0.1))
            .collect();
        let expand = Dense::new(&mut rng, arch.latent_dim, arch.bottleneck_in(), 1.0);
        let up1 = ConvTranspose2d::new(&mut rng, arch.geom2(), arch.conv2_channels, 1.0);
        let up2 = ConvTranspose2d::new(&mut rng, arch.geom1(), arch.conv1_channels, 0.05);
        Ok(Self {
            arch,
            conv1,
            conv2,
            bottleneck,
            expand,
            up1,
            up2,
            pixel_bias: mean_image.iter().map(|&p| logit(p)).collect(),
            train_seed: seed,
        })
    }

    pub fn arch(&self) -> CodecArch {
        self.arch
    }

    pub fn train_seed(&self) -> u64 {
        self.train_seed
    }

    fn encode_forward(&self, x: &Array2<f32>) -> EncodeCache {
        let (p1, c1) = self.conv1.forward(x);
        let a1 = nn::relu(&p1);
        let (p2, c2) = self.conv2.forward(&a1);
        let a2 = nn::relu(&p2);
        let h = self.bottleneck.forward(&a2);
        let z = power_normalize_rows(&h);
        EncodeCache {
            c1,
            p1,
            c2,
            p2,
            a2,
            h,
            z,
        }
    }

    fn decode_forward(&self, z: &Array2<f32>) -> DecodeCache {
        let e = self.expand.forward(z);
        let ea = nn::relu(&e);
        let (p, u1) = self.up1.forward(&ea);
        let pa = nn::relu(&p);
        let (mut y, u2) = self.up2.forward(&pa);
        nn::add_bias(&mut y, &self.pixel_bias);
        let out = nn::sigmoid(&y);
        DecodeCache {
            z: z.clone(),
            e,
            u1,
            p,
            u2,
            out,
        }
    }

    /// Decoder backward. Returns the latent gradient and, when requested,
    /// the decoder parameter gradients `[expand, up1, up2, pixel_bias]`.
    fn decode_backward(
        &self,
        cache: &DecodeCache,
        g_out: &Array2<f32>,
        want_params: bool,
    ) -> (Array2<f32>, Grads) {
        let gy = nn::sigmoid_backward(&cache.out, g_out);
        let mut g_up2 = Grads::default();
        let mut g_up1 = Grads::default();
        let mut g_expand = Grads::default();
        let gz = if want_params {
            let gpa = self.up2.backward(&cache.u2, &gy, &mut g_up2);
            let gp = nn::relu_backward(&cache.p, &gpa);
            let gea = self.up1.backward(&cache.u1, &gp, &mut g_up1);
            let ge = nn::relu_backward(&cache.e, &gea);
            self.expand.backward(&cache.z, &ge, &mut g_expand)
        } else {
            let gpa = self.up2.input_grad(&gy);
            let gp = nn::relu_backward(&cache.p, &gpa);
            let gea = self.up1.input_grad(&gp);
            let ge = nn::relu_backward(&cache.e, &gea);
            self.expand.input_grad(&ge)
        };
        let mut grads = Grads::default();
        if want_params {
            grads.extend(g_expand);
            grads.extend(g_up1);
            grads.extend(g_up2);
            grads.push(gy.sum_axis(Axis(0)).to_vec());
        }
        (gz, grads)
    }

    /// Encoder parameter gradients `[conv1, conv2, bottleneck]`.
    fn encode_backward(&self, cache: &EncodeCache, gz: &Array2<f32>) -> Grads {
        let gh = power_normalize_backward(&cache.h, gz);
        let mut g_bottleneck = Grads::default();
        let ga2 = self.bottleneck.backward(&cache.a2, &gh, &mut g_bottleneck);
        let gp2 = nn::relu_backward(&cache.p2, &ga2);
        let mut g_conv2 = Grads::default();
        let ga1 = self.conv2.backward(&cache.c2, &gp2, &mut g_conv2);
        let gp1 = nn::relu_backward(&cache.p1, &ga1);
        let mut g_conv1 = Grads::default();
        let _ = self.conv1.backward(&cache.c1, &gp1, &mut g_conv1);
        let mut grads = Grads::default();
        grads.extend(g_conv1);
        grads.extend(g_conv2);
        grads.extend(g_bottleneck);
        grads
    }

    fn params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut p = Vec::new();
        p.extend(self.conv1.params_mut());
        p.extend(self.conv2.params_mut());
        p.extend(self.bottleneck.params_mut());
        p.extend(self.expand.params_mut());
        p.extend(self.up1.params_mut());
        p.extend(self.up2.params_mut());
        p.push(self.pixel_bias.as_slice_mut().expect("contiguous"));
        p
    }

    pub fn encode_array(&self, x: &Array2<f32>) -> Array2<f32> {
        self.encode_forward(x).z
    }

    pub fn decode_array(&self, z: &Array2<f32>) -> Array2<f32> {
        self.decode_forward(z).out
    }

    pub fn encode(&self, img: &ImageSample) -> LatentSignal {
        let x = to_batch(std::slice::from_ref(img));
        batch_to_latents(&self.encode_array(&x)).remove(0)
    }

    pub fn decode(&self, z: &LatentSignal) -> Result<Image> {
        let batch = latents_to_batch(std::slice::from_ref(z), self.arch.latent_dim)?;
        Ok(self.decode_array(&batch).row(0).to_vec())
    }

    /// Per-sample reconstruction MSE against `targets` and its gradient with
    /// respect to the latent input, for a batch of latents.
    pub fn reconstruction_loss_grad(
        &self,
        latents: &[LatentSignal],
        targets: &[&[f32]],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        if latents.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: latents.len(),
                actual: targets.len(),
            });
        }
        let z = latents_to_batch(latents, self.arch.latent_dim)?;
        let cache = self.decode_forward(&z);
        let mut g_out = cache.out.clone();
        let mut losses = Vec::with_capacity(latents.len());
        for (mut row, target) in g_out.axis_iter_mut(Axis(0)).zip(targets) {
            let mut loss = 0.0f64;
            for (v, &t) in row.iter_mut().zip(target.iter()) {
                let d = *v - t;
                loss += f64::from(d * d);
                *v = 2.0 * d / IMAGE_PIXELS as f32;
            }
            losses.push(loss / IMAGE_PIXELS as f64);
        }
        let (gz, _) = self.decode_backward(&cache, &g_out, false);
        let grads = gz
            .axis_iter(Axis(0))
            .map(|r| r.iter().map(|&v| f64::from(v)).collect())
            .collect();
        Ok((losses, grads))
    }

    pub fn export(&self) -> Vec<NamedArray> {
        let mut out = Vec::new();
        self.conv1.export("conv1", &mut out);
        self.conv2.export("conv2", &mut out);
        self.bottleneck.export("bottleneck", &mut out);
        self.expand.export("expand", &mut out);
        self.up1.export("up1", &mut out);
        self.up2.export("up2", &mut out);
        out.push(NamedArray::new(
            "pixel_bias",
            vec![IMAGE_PIXELS],
            self.pixel_bias.to_vec(),
        ));
        out
    }

    pub fn import(arch: CodecArch, train_seed: u64, mut arrays: Vec<NamedArray>) -> Result<Self> {
        arch.validate()?;
        let a = &mut arrays;
        let model = Self {
            arch,
            conv1: Conv2d::import("conv1", arch.geom1(), arch.conv1_channels, a)?,
            conv2: Conv2d::import("conv2", arch.geom2(), arch.conv2_channels, a)?,
            bottleneck: Dense::import("bottleneck", arch.bottleneck_in(), arch.latent_dim, a)?,
            expand: Dense::import("expand", arch.latent_dim, arch.bottleneck_in(), a)?,
            up1: ConvTranspose2d::import("up1", arch.geom2(), arch.conv2_channels, a)?,
            up2: ConvTranspose2d::import("up2", arch.geom1(), arch.conv1_channels, a)?,
            pixel_bias: Array1::from_vec(nn::take_array(a, "pixel_bias", &[IMAGE_PIXELS])?),
            train_seed,
        };
        if let Some(extra) = arrays.first() {
            return Err(Error::Checkpoint(format!("unexpected array `{}`", extra.name)));
        }
        Ok(model)
    }
}

impl SemanticCodec for CodecModel {
    fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn encode_batch(&self, images: &[ImageSample]) -> Vec<LatentSignal> {
        images
            .chunks(EVAL_CHUNK)
            .flat_map(|chunk| batch_to_latents(&self.encode_array(&to_batch(chunk))))
            .collect()
    }

    fn decode_batch(&self, latents: &[LatentSignal]) -> Result<Vec<Image>> {
        let mut out = Vec::with_capacity(latents.len());
        for chunk in latents.chunks(EVAL_CHUNK) {
            let z = latents_to_batch(chunk, self.arch.latent_dim)?;
            let y = self.decode_array(&z);
            out.extend(y.axis_iter(Axis(0)).map(|r| r.to_vec()));
        }
        Ok(out)
    }
}

/// Adds per-example AWGN with SNR drawn from `range` (unit-power latents).
fn channel_noise<R: Rng>(z: &Array2<f32>, range: Option<(f64, f64)>, rng: &mut R) -> Array2<f32> {
    let Some((lo, hi)) = range else {
        return z.clone();
    };
    let mut y = z.clone();
    for mut row in y.axis_iter_mut(Axis(0)) {
        let snr_db = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let sigma = (1.0 / db_to_linear(snr_db)).sqrt() as f32;
        row.mapv_inplace(|v| v + sigma * rng.sample::<f32, _>(StandardNormal));
    }
    y
}

fn batch_loss(model: &CodecModel, x: &Array2<f32>, noisy_z: &Array2<f32>) -> f64 {
    let out = model.decode_array(noisy_z);
    nn::mse_loss(&out, x).0
}

/// Trains a codec end to end through an AWGN channel.
pub fn train_codec(dataset: &[ImageSample], arch: CodecArch, cfg: &TrainConfig) -> Result<(CodecModel, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::Degenerate("empty training set"));
    }
    cfg.validate()?;
    let mut model = CodecModel::init(arch, &mean_image(dataset), cfg.seed)?;

    // fixed monitoring set with frozen channel noise
    let monitor = &dataset[..dataset.len().min(MONITOR_SIZE)];
    let monitor_x = to_batch(monitor);
    let mut monitor_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    monitor_rng.set_stream(2);
    let monitor_eval = |m: &CodecModel, rng: &mut ChaCha8Rng| {
        let z = m.encode_array(&monitor_x);
        batch_loss(m, &monitor_x, &channel_noise(&z, cfg.snr_range_db, rng))
    };
    let initial_loss = monitor_eval(&model, &mut monitor_rng.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Adam::new(cfg.learning_rate as f32);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<ImageSample> = idx.iter().map(|&i| dataset[i].clone()).collect();
            let x = to_batch(&batch);
            let enc = model.encode_forward(&x);
            let noisy = channel_noise(&enc.z, cfg.snr_range_db, &mut rng);
            let dec = model.decode_forward(&noisy);
            let (loss, g_out) = nn::mse_loss(&dec.out, &x);
            total += loss * idx.len() as f64;
            let (gz, dec_grads) = model.decode_backward(&dec, &g_out, true);
            let mut grads = model.encode_backward(&enc, &gz);
            grads.extend(dec_grads);
            opt.step(model.params_mut(), &grads);
        }
        epoch_losses.push(total / dataset.len() as f64);
    }
    let final_loss = monitor_eval(&model, &mut monitor_rng);
    let report = TrainReport {
        initial_loss,
        final_loss,
        epoch_losses,
    };
    cfg.check_convergence(&report)?;
    Ok((model, report))
}

/// Mean per-pixel squared error between `images` and their reconstructions
/// after `channel` has transformed each latent. `channel` receives the image
/// index and the transmitted latent.
pub fn communication_mse<C, F>(codec: &C, images: &[ImageSample], mut channel: F) -> Result<f64>
where
    C: SemanticCodec + ?Sized,
    F: FnMut(usize, &LatentSignal) -> Result<LatentSignal>,
{
    if images.is_empty() {
        return Err(Error::Degenerate("no images to evaluate"));
    }
    let mut total = 0.0f64;
    for (c, chunk) in images.chunks(EVAL_CHUNK).enumerate() {
        let latents = codec.encode_batch(chunk);
        let received = latents
            .iter()
            .enumerate()
            .map(|(i, z)| channel(c * EVAL_CHUNK + i, z))
            .collect::<Result<Vec<_>>>()?;
        let decoded = codec.decode_batch(&received)?;
        total += chunk
            .iter()
            .zip(&decoded)
            .map(|(img, out)| pixel_mse(img.pixels(), out))
            .sum::<f64>();
    }
    Ok(total / images.len() as f64)
}

pub fn pixel_mse(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        / a.len() as f64
}
