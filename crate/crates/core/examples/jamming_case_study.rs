//! High-power pulse jamming at 40 dB: Bob's reconstruction error with no
//! defense, with diffusion alone, and with identification plus coarse
//! cancellation ahead of diffusion.
//!
//! ```text
//! cargo run --release --example jamming_case_study
//! ```

use semshield::codec::{pixel_mse, SemanticCodec};
use semshield::data::DatasetSource;
use semshield::defense::defend_batch;
use semshield::diffusion::receive_and_denoise_batch;
use semshield::harness::config::{CodecJob, DenoiserJob};
use semshield::harness::experiment::{run_codec_job, run_denoiser_job};
use semshield::jammer::{gen_jamming, JammerProfile, JammingKind, Waveform};
use semshield::signal::{add_white_noise, db_to_linear, LatentSignal, RngStream};

fn main() -> semshield::Result<()> {
    let dataset = DatasetSource::Synthetic {
        train: 4000,
        test: 500,
        seed: 2024,
    };
    let mut codec_job = CodecJob::default();
    codec_job.dataset = dataset.clone();
    codec_job.train.epochs = 4;
    let (codec, _) = run_codec_job(&codec_job)?;
    let mut denoiser_job = DenoiserJob::default();
    denoiser_job.dataset = dataset.clone();
    denoiser_job.train.epochs = 20;
    let (denoiser, _) = run_denoiser_job(&denoiser_job, &codec)?;

    let test = dataset.load_test()?;
    let latents = codec.encode_batch(&test);
    let mse = |zs: &[LatentSignal]| -> semshield::Result<f64> {
        let out = codec.decode_batch(zs)?;
        Ok(test.iter().zip(&out).map(|(a, b)| pixel_mse(a.pixels(), b)).sum::<f64>() / test.len() as f64)
    };
    let profile = JammerProfile::new(Waveform::default_for(JammingKind::Pulse), 40.0, 0)?;

    println!("snr_db  no_jamming  undefended  diffusion_only  coarse_fine  identified");
    for snr_db in [5.0, 10.0, 15.0] {
        let noise = 1.0 / db_to_linear(snr_db);
        let mut rng = RngStream::derived(5, "example_jam", snr_db as u64);
        let mut clean = Vec::new();
        let mut jammed = Vec::new();
        for z in &latents {
            clean.push(add_white_noise(z, noise, &mut rng)?);
            let j = gen_jamming(&profile, z.dim(), &mut rng)?;
            jammed.push(add_white_noise(&z.add(&j)?, noise, &mut rng)?);
        }
        let sinr = 1.0 / (noise + profile.power());
        let diffusion_only = receive_and_denoise_batch(&jammed, &vec![sinr; jammed.len()], &denoiser)?;
        let defended = defend_batch(&jammed, noise, &denoiser)?;
        let pulses = defended
            .iter()
            .filter(|d| d.identification.kind.name() == "pulse")
            .count();
        let outputs: Vec<LatentSignal> = defended.into_iter().map(|d| d.output).collect();
        println!(
            "{snr_db:>6}  {:>10.5}  {:>10.4}  {:>14.4}  {:>11.5}  {pulses}/{} pulse",
            mse(&clean)?,
            mse(&jammed)?,
            mse(&diffusion_only)?,
            mse(&outputs)?,
            latents.len()
        );
    }
    Ok(())
}
