//! Eve's attacks on intercepted latents and the privacy metrics computed
//! from them.
//!
//! Eve knows the public decoder (model inversion) and trains her own
//! attribute classifier on latents as they reach her, before any artificial
//! noise is deployed.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codec::{Image, SemanticCodec};
use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::nn::{self, Adam, Dense, Grads, NamedArray};
use crate::signal::{db_to_linear, ChannelSpec, LatentSignal};
use crate::training::{TrainConfig, TrainReport};

/// Alice-to-Eve link parameters.
pub type EveChannelSpec = ChannelSpec;

const EVAL_CHUNK: usize = 512;
const PROB_FLOOR: f64 = 1e-12;

/// Anything that maps latents to class probabilities.
pub trait AttributeClassifier {
    fn num_classes(&self) -> usize;
    fn predict_proba(&self, signals: &[LatentSignal]) -> Result<Vec<Vec<f64>>>;
}

/// A classifier whose cross-entropy can be differentiated with respect to
/// its input.
pub trait DifferentiableClassifier: AttributeClassifier {
    /// Per-sample cross-entropy and its input gradient.
    fn loss_grad(&self, signals: &[LatentSignal], labels: &[u8]) -> Result<(Vec<f64>, Vec<Vec<f64>>)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EveArch {
    pub input_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
}

impl Default for EveArch {
    fn default() -> Self {
        Self {
            input_dim: 64,
            hidden: 128,
            num_classes: NUM_CLASSES,
        }
    }
}

impl EveArch {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.num_classes < 2 {
            return Err(Error::InvalidParameter("invalid classifier shape".into()));
        }
        Ok(())
    }
}

/// Two-layer ReLU classifier over latents.
#[derive(Debug, Clone, PartialEq)]
pub struct EveClassifier {
    arch: EveArch,
    hidden: Dense,
    output: Dense,
    train_seed: u64,
}

struct Cache {
    x: Array2<f32>,
    pre: Array2<f32>,
    act: Array2<f32>,
}

fn to_rows(signals: &[LatentSignal], dim: usize) -> Result<Array2<f32>> {
    let mut out = Array2::zeros((signals.len(), dim));
    for (mut row, z) in out.axis_iter_mut(Axis(0)).zip(signals) {
        if z.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: z.dim(),
            });
        }
        row.iter_mut().zip(z.values()).for_each(|(r, &v)| *r = v as f32);
    }
    Ok(out)
}

fn check_labels(labels: &[u8], classes: usize) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            if (l as usize) < classes {
                Ok(l as usize)
            } else {
                Err(Error::InvalidParameter(format!("label {l} outside {classes} classes")))
            }
        })
        .collect()
}

impl EveClassifier {
    pub fn init(arch: EveArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            arch,
            hidden: Dense::new(&mut rng, arch.input_dim, arch.hidden, 1.0),
            output: Dense::new(&mut rng, arch.hidden, arch.num_classes, 0.5),
            train_seed: seed,
        })
    }

    pub fn arch(&self) -> EveArch {
        self.arch
    }

    pub fn train_seed(&self) -> u64 {
        self.train_seed
    }

    fn forward(&self, x: &Array2<f32>) -> (Array2<f32>, Cache) {
        let pre = self.hidden.forward(x);
        let act = nn::relu(&pre);
        let logits = self.output.forward(&act);
        (
            logits,
            Cache {
                x: x.clone(),
                pre,
                act,
            },
        )
    }

    fn params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut p = self.hidden.params_mut();
        p.extend(self.output.params_mut());
        p
    }

    fn backward(&self, cache: &Cache, g_logits: &Array2<f32>) -> Grads {
        let mut g_out = Grads::default();
        let g_act = self.output.backward(&cache.act, g_logits, &mut g_out);
        let g_pre = nn::relu_backward(&cache.pre, &g_act);
        let mut grads = Grads::default();
        let _ = self.hidden.backward(&cache.x, &g_pre, &mut grads);
        grads.extend(g_out);
        grads
    }

    /// Most probable class per signal.
    pub fn predict(&self, signals: &[LatentSignal]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(signals.len());
        for chunk in signals.chunks(EVAL_CHUNK) {
            let (logits, _) = self.forward(&to_rows(chunk, self.arch.input_dim)?);
            for row in logits.rows() {
                let best = row
                    .iter()
                    .enumerate()
                    .fold((0, f32::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
                out.push(best.0 as u8);
            }
        }
        Ok(out)
    }

    pub fn export(&self) -> Vec<NamedArray> {
        let mut out = Vec::new();
        self.hidden.export("hidden", &mut out);
        self.output.export("output", &mut out);
        out
    }

    pub fn import(arch: EveArch, train_seed: u64, mut arrays: Vec<NamedArray>) -> Result<Self> {
        arch.validate()?;
        let a = &mut arrays;
        let hidden = Dense::import("hidden", arch.input_dim, arch.hidden, a)?;
        let output = Dense::import("output", arch.hidden, arch.num_classes, a)?;
        if let Some(extra) = arrays.first() {
            return Err(Error::Checkpoint(format!("unexpected array `{}`", extra.name)));
        }
        Ok(Self {
            arch,
            hidden,
            output,
            train_seed,
        })
    }
}

impl AttributeClassifier for EveClassifier {
    fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    fn predict_proba(&self, signals: &[LatentSignal]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(signals.len());
        for chunk in signals.chunks(EVAL_CHUNK) {
            let (logits, _) = self.forward(&to_rows(chunk, self.arch.input_dim)?);
            let probs = nn::softmax(&logits);
            out.extend(probs.rows().into_iter().map(|r| r.iter().map(|&p| f64::from(p)).collect()));
        }
        Ok(out)
    }
}

impl DifferentiableClassifier for EveClassifier {
    fn loss_grad(&self, signals: &[LatentSignal], labels: &[u8]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        if signals.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: signals.len(),
                actual: labels.len(),
            });
        }
        let ys = check_labels(labels, self.arch.num_classes)?;
        let x = to_rows(signals, self.arch.input_dim)?;
        let (logits, cache) = self.forward(&x);
        let probs = nn::softmax(&logits);
        let mut g = probs.clone();
        let mut losses = Vec::with_capacity(ys.len());
        for (i, &y) in ys.iter().enumerate() {
            losses.push(-f64::from(probs[[i, y]]).max(PROB_FLOOR).ln());
            g[[i, y]] -= 1.0;
        }
        let g_act = self.output.input_grad(&g);
        let g_pre = nn::relu_backward(&cache.pre, &g_act);
        let gx = self.hidden.input_grad(&g_pre);
        let grads = gx
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&v| f64::from(v)).collect())
            .collect();
        Ok((losses, grads))
    }
}

/// Training outcome: the loss trajectory plus held-out accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EveReport {
    pub train: TrainReport,
    pub validation_accuracy: f64,
}

fn augment<R: Rng>(x: &Array2<f32>, range: Option<(f64, f64)>, rng: &mut R) -> Array2<f32> {
    let Some((lo, hi)) = range else {
        return x.clone();
    };
    let mut y = x.clone();
    for mut row in y.axis_iter_mut(Axis(0)) {
        let snr_db = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let sigma = (1.0 / db_to_linear(snr_db)).sqrt() as f32;
        row.mapv_inplace(|v| v + sigma * rng.sample::<f32, _>(StandardNormal));
    }
    y
}

/// Trains Eve's attribute classifier. `cfg.snr_range_db` models Eve's own
/// channel: every example is re-noised at an SNR drawn from that range on
/// each pass. A tenth of the data (at least one sample once there are ten)
/// is held out for validation with frozen noise.
pub fn train_attribute_classifier(
    latents: &[LatentSignal],
    labels: &[u8],
    arch: EveArch,
    cfg: &TrainConfig,
) -> Result<(EveClassifier, EveReport)> {
    if latents.is_empty() {
        return Err(Error::Degenerate("empty labeled set"));
    }
    if latents.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: latents.len(),
            actual: labels.len(),
        });
    }
    cfg.validate()?;
    let ys = check_labels(labels, arch.num_classes)?;
    let mut model = EveClassifier::init(arch, cfg.seed)?;
    let all = to_rows(latents, arch.input_dim)?;
    let held = if latents.len() >= 10 { latents.len() / 10 } else { 0 };
    let n_train = latents.len() - held;
    let (val_x, val_y) = if held > 0 {
        (all.slice(ndarray::s![n_train.., ..]).to_owned(), ys[n_train..].to_vec())
    } else {
        (all.clone(), ys.clone())
    };
    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    val_rng.set_stream(3);
    let val_x = augment(&val_x, cfg.snr_range_db, &mut val_rng);
    let val_eval = |m: &EveClassifier| {
        let (logits, _) = m.forward(&val_x);
        let loss = nn::softmax_cross_entropy(&logits, &val_y).0;
        let hits = logits
            .rows()
            .into_iter()
            .zip(&val_y)
            .filter(|(r, &y)| r.iter().all(|&v| v <= r[y]))
            .count();
        (loss, hits as f64 / val_y.len() as f64)
    };
    let (initial_loss, _) = val_eval(&model);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Adam::new(cfg.learning_rate as f32);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let x = augment(&all.select(Axis(0), idx), cfg.snr_range_db, &mut rng);
            let y: Vec<usize> = idx.iter().map(|&i| ys[i]).collect();
            let (logits, cache) = model.forward(&x);
            let (loss, g) = nn::softmax_cross_entropy(&logits, &y);
            total += loss * idx.len() as f64;
            let grads = model.backward(&cache, &g);
            opt.step(model.params_mut(), &grads);
        }
        epoch_losses.push(total / n_train as f64);
    }
    let (final_loss, validation_accuracy) = val_eval(&model);
    let train = TrainReport {
        initial_loss,
        final_loss,
        epoch_losses,
    };
    cfg.check_convergence(&train)?;
    Ok((
        model,
        EveReport {
            train,
            validation_accuracy,
        },
    ))
}

fn check_eval_inputs(signals: &[LatentSignal], labels: &[u8]) -> Result<()> {
    if signals.is_empty() {
        return Err(Error::Degenerate("no signals to evaluate"));
    }
    if signals.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: signals.len(),
            actual: labels.len(),
        });
    }
    Ok(())
}

/// Top-1 accuracy. Ties resolve to the lowest class index.
pub fn eve_accuracy<C: AttributeClassifier + ?Sized>(c: &C, signals: &[LatentSignal], labels: &[u8]) -> Result<f64> {
    check_eval_inputs(signals, labels)?;
    let probs = c.predict_proba(signals)?;
    let hits = probs
        .iter()
        .zip(labels)
        .filter(|(p, &y)| {
            let best = p
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
            best.0 == y as usize
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Empirical entropy of a label sequence, in nats.
pub fn label_entropy(labels: &[u8]) -> f64 {
    let mut counts = [0usize; 256];
    for &l in labels {
        counts[l as usize] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Classifier-based lower bound on the mutual information between labels
/// and intercepted signals: label entropy minus mean cross-entropy, floored
/// at zero.
pub fn privacy_leakage_mi<C: AttributeClassifier + ?Sized>(
    c: &C,
    signals: &[LatentSignal],
    labels: &[u8],
) -> Result<f64> {
    check_eval_inputs(signals, labels)?;
    check_labels(labels, c.num_classes())?;
    let probs = c.predict_proba(signals)?;
    let ce = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| -p[y as usize].max(PROB_FLOOR).ln())
        .sum::<f64>()
        / labels.len() as f64;
    Ok((label_entropy(labels) - ce).max(0.0))
}

/// Eve decodes the intercepted latent with the publicly released decoder.
pub fn model_inversion_attack<C: SemanticCodec + ?Sized>(z_eve: &LatentSignal, public_codec: &C) -> Result<Image> {
    if z_eve.dim() != public_codec.latent_dim() {
        return Err(Error::DimensionMismatch {
            expected: public_codec.latent_dim(),
            actual: z_eve.dim(),
        });
    }
    Ok(public_codec.decode_batch(std::slice::from_ref(z_eve))?.remove(0))
}
