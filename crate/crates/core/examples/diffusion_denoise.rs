//! Trains a codec and a latent denoiser, then compares plain decoding with
//! SNR-matched diffusion denoising over a range of AWGN channels.
//!
//! ```text
//! cargo run --release --example diffusion_denoise
//! ```

use semshield::codec::{pixel_mse, SemanticCodec};
use semshield::data::DatasetSource;
use semshield::diffusion::{estimate_timestep, receive_and_denoise_batch};
use semshield::harness::config::{CodecJob, DenoiserJob};
use semshield::harness::experiment::{run_codec_job, run_denoiser_job};
use semshield::signal::{awgn, db_to_linear, LatentSignal, RngStream};

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
    let (denoiser, report) = run_denoiser_job(&denoiser_job, &codec)?;
    println!("denoiser loss {:.4} -> {:.4}", report.initial_loss, report.final_loss);

    let test = dataset.load_test()?;
    let latents = codec.encode_batch(&test);
    let mse = |zs: &[LatentSignal]| -> semshield::Result<f64> {
        let out = codec.decode_batch(zs)?;
        Ok(test.iter().zip(&out).map(|(a, b)| pixel_mse(a.pixels(), b)).sum::<f64>() / test.len() as f64)
    };

    println!("snr_db  t_start  undefended  denoised");
    for snr_db in [0.0, 5.0, 10.0, 15.0, 20.0] {
        let mut rng = RngStream::derived(11, "example_channel", snr_db as u64);
        let received = latents
            .iter()
            .map(|z| awgn(z, snr_db, &mut rng))
            .collect::<semshield::Result<Vec<_>>>()?;
        let snr = db_to_linear(snr_db);
        let denoised = receive_and_denoise_batch(&received, &vec![snr; received.len()], &denoiser)?;
        println!(
            "{snr_db:>6}  {:>7}  {:>10.5}  {:>8.5}",
            estimate_timestep(snr, denoiser.schedule())?,
            mse(&received)?,
            mse(&denoised)?
        );
    }
    Ok(())
}
