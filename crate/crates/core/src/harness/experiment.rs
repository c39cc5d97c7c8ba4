//! Experiment orchestration for the baseline, eavesdropping (case A) and
//! jamming (case B) scenarios, plus the training jobs behind the CLI.

use std::collections::BTreeMap;

use crate::codec::{pixel_mse, train_codec, CodecModel, SemanticCodec};
use crate::data::ImageSample;
use crate::defense::defend_batch;
use crate::diffusion::{blind_snr, receive_and_denoise_batch, train_denoiser, DenoiserModel};
use crate::eavesdrop::{eve_accuracy, privacy_leakage_mi, train_attribute_classifier, EveClassifier, EveReport};
use crate::error::{Error, Result};
use crate::jammer::{gen_adversarial, gen_jamming, JammerProfile, ReconstructionObjective};
use crate::shield::{gen_adversarial_an_batch, gen_gaussian_an, perceptibility_mse};
use crate::signal::{add_white_noise, db_to_linear, LatentSignal, RngStream};
use crate::training::TrainReport;

use super::checkpoint::{load_codec, load_denoiser, load_eve};
use super::config::{CodecJob, DenoiserJob, EveJob, ExperimentConfig, Scenario, SnrMode};
use super::report::MetricsRecord;

/// Trained models an experiment runs against.
#[derive(Debug, Clone)]
pub struct Models {
    pub codec: CodecModel,
    pub denoiser: DenoiserModel,
    pub eve: Option<EveClassifier>,
}

impl Models {
    /// Loads the checkpoints named in `cfg`; Eve's is loaded only for the
    /// eavesdropping scenarios.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let codec = load_codec(&cfg.checkpoints.codec)?;
        let denoiser = load_denoiser(&cfg.checkpoints.denoiser)?;
        let eve = match (&cfg.checkpoints.eve, cfg.scenario.is_eavesdrop()) {
            (Some(p), true) => Some(load_eve(p)?),
            (None, true) => return Err(Error::Config("eavesdropping scenarios need checkpoints.eve".into())),
            _ => None,
        };
        Ok(Self { codec, denoiser, eve })
    }

    fn eve(&self) -> Result<&EveClassifier> {
        self.eve
            .as_ref()
            .ok_or_else(|| Error::Config("no Eve classifier loaded".into()))
    }
}

/// Held-out images with their clean latents.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub images: Vec<ImageSample>,
    pub latents: Vec<LatentSignal>,
    pub labels: Vec<u8>,
}

impl EvalSet {
    pub fn new(images: Vec<ImageSample>, codec: &CodecModel) -> Self {
        let latents = codec.encode_batch(&images);
        let labels = images.iter().map(|i| i.label()).collect();
        Self {
            images,
            latents,
            labels,
        }
    }

    pub fn from_config(cfg: &ExperimentConfig, codec: &CodecModel) -> Result<Self> {
        let mut images = cfg.dataset.load_test()?;
        if images.len() < cfg.eval_images {
            return Err(Error::Config(format!(
                "eval_images = {} but the test split holds {}",
                cfg.eval_images,
                images.len()
            )));
        }
        images.truncate(cfg.eval_images);
        Ok(Self::new(images, codec))
    }
}

/// Stream for one arm at one operating point. The tag names the arm's
/// randomness source; the point coordinates enter the stream index.
fn stream(seed: u64, tag: &str, point: &[u64]) -> RngStream {
    let index = point
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, v| (h ^ v).wrapping_mul(0x0000_0100_0000_01b3));
    RngStream::derived(seed, tag, index)
}

fn noise_power(snr_db: f64) -> f64 {
    1.0 / db_to_linear(snr_db)
}

fn through_channel(xs: &[LatentSignal], noise: f64, rng: &mut RngStream) -> Result<Vec<LatentSignal>> {
    xs.iter().map(|x| add_white_noise(x, noise, rng)).collect()
}

fn superpose(a: &[LatentSignal], b: &[LatentSignal]) -> Result<Vec<LatentSignal>> {
    a.iter().zip(b).map(|(x, y)| x.add(y)).collect()
}

/// Mean per-pixel MSE of the decoded latents against the clean images.
pub fn decode_mse(codec: &CodecModel, images: &[ImageSample], latents: &[LatentSignal]) -> Result<f64> {
    let out = codec.decode_batch(latents)?;
    Ok(images
        .iter()
        .zip(&out)
        .map(|(img, o)| pixel_mse(img.pixels(), o))
        .sum::<f64>()
        / images.len() as f64)
}

fn denoise(ys: &[LatentSignal], known_sinr: f64, mode: SnrMode, m: &DenoiserModel) -> Result<Vec<LatentSignal>> {
    let sinrs: Vec<f64> = match mode {
        SnrMode::Genie => vec![known_sinr; ys.len()],
        SnrMode::Blind => ys.iter().map(blind_snr).collect(),
    };
    receive_and_denoise_batch(ys, &sinrs, m)
}

fn modal_kind(names: impl Iterator<Item = &'static str>) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for n in names {
        *counts.entry(n).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))
        .map(|(k, _)| k.to_string())
}

/// AWGN only, plain and denoised. Shared by the baseline scenario and the
/// unjammed reference arms, so all of them draw the same channel noise.
fn clean_arm(cfg: &ExperimentConfig, models: &Models, eval: &EvalSet, snr: f64, seed: u64) -> Result<(f64, f64)> {
    let np = noise_power(snr);
    let ys = through_channel(&eval.latents, np, &mut stream(seed, "bob_channel", &[snr.to_bits()]))?;
    let undefended = decode_mse(&models.codec, &eval.images, &ys)?;
    let den = denoise(&ys, 1.0 / np, cfg.snr_mode, &models.denoiser)?;
    Ok((decode_mse(&models.codec, &eval.images, &den)?, undefended))
}

fn at_point<T>(scenario: Scenario, snr: f64, seed: u64, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.context(format!("{} at {snr} dB, seed {seed}", scenario.name())))
}

pub fn run_baseline(cfg: &ExperimentConfig, models: &Models, eval: &EvalSet) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for &snr in &cfg.snr_db {
        for &seed in &cfg.seeds {
            let (def, und) = at_point(cfg.scenario, snr, seed, clean_arm(cfg, models, eval, snr, seed))?;
            out.push(MetricsRecord {
                comm_mse: Some(def),
                comm_mse_undefended: Some(und),
                ..MetricsRecord::new("baseline", snr, seed)
            });
        }
    }
    Ok(out)
}

fn case_a_point(
    cfg: &ExperimentConfig,
    models: &Models,
    eval: &EvalSet,
    snr: f64,
    p: f64,
    seed: u64,
) -> Result<MetricsRecord> {
    let eve = models.eve()?;
    let mut an_rng = stream(seed, "an", &[snr.to_bits(), p.to_bits()]);
    let an = match cfg.scenario {
        Scenario::EavesdropGaussian => eval
            .latents
            .iter()
            .map(|z| gen_gaussian_an(z.dim(), p, &mut an_rng))
            .collect::<Result<Vec<_>>>()?,
        Scenario::EavesdropAdversarial => {
            gen_adversarial_an_batch(eve, &eval.latents, &eval.labels, p, &cfg.an_attack, &mut an_rng)?.deltas
        }
        other => return Err(Error::Config(format!("{} is not an eavesdropping scenario", other.name()))),
    };
    let xs = superpose(&eval.latents, &an)?;
    let percept = eval
        .latents
        .iter()
        .zip(&xs)
        .map(|(z, x)| perceptibility_mse(z, x))
        .sum::<Result<f64>>()?
        / xs.len() as f64;

    let np = noise_power(snr);
    let bob = through_channel(&xs, np, &mut stream(seed, "bob_channel", &[snr.to_bits()]))?;
    let undefended = decode_mse(&models.codec, &eval.images, &bob)?;
    let den = denoise(&bob, 1.0 / (np + p), cfg.snr_mode, &models.denoiser)?;
    let defended = decode_mse(&models.codec, &eval.images, &den)?;

    let eve_np = noise_power(cfg.eve_snr_db.unwrap_or(snr));
    let tapped = through_channel(&xs, eve_np, &mut stream(seed, "eve_channel", &[snr.to_bits()]))?;
    Ok(MetricsRecord {
        an_power: Some(p),
        comm_mse: Some(defended),
        comm_mse_undefended: Some(undefended),
        privacy_mi: Some(privacy_leakage_mi(eve, &tapped, &eval.labels)?),
        eve_accuracy: Some(eve_accuracy(eve, &tapped, &eval.labels)?),
        percept_mse: Some(percept),
        ..MetricsRecord::new(cfg.scenario.name(), snr, seed)
    })
}

/// Eavesdropping case study: one row per `(snr, an_power, seed)` with
/// Bob's defended and undefended MSE, Eve's accuracy and leakage, and the
/// AN perceptibility.
pub fn run_case_a(cfg: &ExperimentConfig, models: &Models, eval: &EvalSet) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for &snr in &cfg.snr_db {
        for &p in &cfg.an_power {
            for &seed in &cfg.seeds {
                let r = case_a_point(cfg, models, eval, snr, p, seed)
                    .map_err(|e| e.context(format!("{} at {snr} dB, AN {p}, seed {seed}", cfg.scenario.name())))?;
                out.push(r);
            }
        }
    }
    Ok(out)
}

fn jam_rows(
    cfg: &ExperimentConfig,
    models: &Models,
    eval: &EvalSet,
    profile: &JammerProfile,
    snr: f64,
    seed: u64,
) -> Result<Vec<MetricsRecord>> {
    let name = cfg.scenario.name();
    let row = |arm: &str| MetricsRecord::new(format!("{name}:{arm}"), snr, seed);
    let jammed = |r: MetricsRecord| MetricsRecord {
        jsr_db: Some(profile.jsr_db),
        ..r
    };
    let point = [snr.to_bits(), profile.seed];
    let np = noise_power(snr);
    let codec = &models.codec;
    let mut rows = Vec::new();

    let (nj_def, nj_und) = clean_arm(cfg, models, eval, snr, seed)?;
    let reference = if cfg.scenario == Scenario::JamHighpower { "no_jamming" } else { "no_attack" };
    rows.push(MetricsRecord {
        comm_mse: Some(nj_def),
        comm_mse_undefended: Some(nj_und),
        ..row(reference)
    });

    let interference = match cfg.scenario {
        Scenario::JamHighpower => {
            let mut rng = stream(seed, "jammer", &point);
            eval.latents
                .iter()
                .map(|z| gen_jamming(profile, z.dim(), &mut rng))
                .collect::<Result<Vec<_>>>()?
        }
        _ => {
            let objective = ReconstructionObjective {
                codec,
                targets: eval.images.iter().map(|i| i.pixels()).collect(),
            };
            gen_adversarial(&objective, &eval.latents, profile, &mut stream(seed, "attacker", &point))?.deltas
        }
    };
    let ys = through_channel(
        &superpose(&eval.latents, &interference)?,
        np,
        &mut stream(seed, "jammed_channel", &point),
    )?;
    let undefended = decode_mse(codec, &eval.images, &ys)?;
    rows.push(jammed(MetricsRecord {
        comm_mse: Some(undefended),
        comm_mse_undefended: Some(undefended),
        ..row("undefended")
    }));

    if cfg.scenario == Scenario::JamHighpower {
        let den = denoise(&ys, 1.0 / (np + profile.power()), cfg.snr_mode, &models.denoiser)?;
        rows.push(jammed(MetricsRecord {
            comm_mse: Some(decode_mse(codec, &eval.images, &den)?),
            comm_mse_undefended: Some(undefended),
            ..row("diffusion_only")
        }));
    }

    let defended = defend_batch(&ys, np, &models.denoiser)?;
    let kind = modal_kind(defended.iter().map(|d| d.identification.kind.name()));
    let outputs: Vec<LatentSignal> = defended.into_iter().map(|d| d.output).collect();
    let arm = if cfg.scenario == Scenario::JamHighpower { "coarse_fine" } else { "defended" };
    rows.push(jammed(MetricsRecord {
        comm_mse: Some(decode_mse(codec, &eval.images, &outputs)?),
        comm_mse_undefended: Some(undefended),
        identified_kind: kind,
        ..row(arm)
    }));
    Ok(rows)
}

/// Jamming case study: per `(snr, seed)` the unjammed reference, the
/// jammed receiver without defence, diffusion only (high-power scenario)
/// and the full identification, cancellation and denoising chain.
pub fn run_case_b(cfg: &ExperimentConfig, models: &Models, eval: &EvalSet) -> Result<Vec<MetricsRecord>> {
    let profile = cfg
        .jammer
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{} needs a jammer profile", cfg.scenario.name())))?;
    if !cfg.scenario.is_jamming() {
        return Err(Error::Config(format!("{} is not a jamming scenario", cfg.scenario.name())));
    }
    let mut out = Vec::new();
    for &snr in &cfg.snr_db {
        for &seed in &cfg.seeds {
            out.extend(at_point(cfg.scenario, snr, seed, jam_rows(cfg, models, eval, profile, snr, seed))?);
        }
    }
    Ok(out)
}

pub fn run_experiment(cfg: &ExperimentConfig, models: &Models, eval: &EvalSet) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    match cfg.scenario {
        Scenario::Baseline => run_baseline(cfg, models, eval),
        Scenario::EavesdropGaussian | Scenario::EavesdropAdversarial => run_case_a(cfg, models, eval),
        Scenario::JamHighpower | Scenario::JamAdversarial => run_case_b(cfg, models, eval),
    }
}

pub fn run_codec_job(job: &CodecJob) -> Result<(CodecModel, TrainReport)> {
    let ds = job.dataset.load()?;
    train_codec(&ds.train, job.arch, &job.train)
}

/// Trains the denoiser on the codec's clean training latents.
pub fn run_denoiser_job(job: &DenoiserJob, codec: &CodecModel) -> Result<(DenoiserModel, TrainReport)> {
    let ds = job.dataset.load()?;
    let latents = codec.encode_batch(&ds.train);
    train_denoiser(&latents, &job.schedule.build()?, job.arch, &job.train)
}

/// Trains Eve on the codec's training latents; AN is never applied.
pub fn run_eve_job(job: &EveJob, codec: &CodecModel) -> Result<(EveClassifier, EveReport)> {
    let ds = job.dataset.load()?;
    let latents = codec.encode_batch(&ds.train);
    let labels: Vec<u8> = ds.train.iter().map(|i| i.label()).collect();
    train_attribute_classifier(&latents, &labels, job.arch, &job.train)
}
