//! Artificial noise against an eavesdropper: Eve's attribute accuracy and
//! leakage estimate, Bob's denoised reconstruction error and the AN
//! perceptibility, for Gaussian and adversarial AN at a few powers.
//!
//! ```text
//! cargo run --release --example eavesdrop_case_study
//! ```

use semshield::codec::{pixel_mse, SemanticCodec};
use semshield::data::DatasetSource;
use semshield::diffusion::receive_and_denoise_batch;
use semshield::eavesdrop::{eve_accuracy, privacy_leakage_mi};
use semshield::harness::config::{CodecJob, DenoiserJob, EveJob};
use semshield::harness::experiment::{run_codec_job, run_denoiser_job, run_eve_job};
use semshield::jammer::AttackSpec;
use semshield::shield::{gen_adversarial_an_batch, gen_gaussian_an, perceptibility_mse};
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
    let mut eve_job = EveJob::default();
    eve_job.dataset = dataset.clone();
    eve_job.train.epochs = 8;
    let (eve, report) = run_eve_job(&eve_job, &codec)?;
    println!("eve validation accuracy {:.3}", report.validation_accuracy);

    let test = dataset.load_test()?;
    let labels: Vec<u8> = test.iter().map(|i| i.label()).collect();
    let latents = codec.encode_batch(&test);
    let snr_db = 10.0;
    let noise = 1.0 / db_to_linear(snr_db);

    println!("an       power  eve_acc  mi_nats  bob_mse  percept");
    for adversarial in [false, true] {
        for power in [0.0, 0.02, 0.09, 0.5] {
            let mut rng = RngStream::derived(9, "example_an", (power * 1000.0) as u64);
            let an = if adversarial {
                gen_adversarial_an_batch(&eve, &latents, &labels, power, &AttackSpec::default(), &mut rng)?.deltas
            } else {
                (0..latents.len())
                    .map(|_| gen_gaussian_an(64, power, &mut rng))
                    .collect::<semshield::Result<_>>()?
            };
            let sent: Vec<LatentSignal> = latents.iter().zip(&an).map(|(z, a)| z.add(a)).collect::<semshield::Result<_>>()?;
            let at_eve: Vec<LatentSignal> =
                sent.iter().map(|x| add_white_noise(x, noise, &mut rng)).collect::<semshield::Result<_>>()?;
            let at_bob: Vec<LatentSignal> =
                sent.iter().map(|x| add_white_noise(x, noise, &mut rng)).collect::<semshield::Result<_>>()?;
            let sinr = 1.0 / (noise + power);
            let restored = codec.decode_batch(&receive_and_denoise_batch(&at_bob, &vec![sinr; at_bob.len()], &denoiser)?)?;
            let bob = test.iter().zip(&restored).map(|(a, b)| pixel_mse(a.pixels(), b)).sum::<f64>() / test.len() as f64;
            let percept = latents
                .iter()
                .zip(&sent)
                .map(|(z, x)| perceptibility_mse(z, x))
                .sum::<semshield::Result<f64>>()?
                / latents.len() as f64;
            println!(
                "{:<8} {power:>5}  {:>7.3}  {:>7.4}  {bob:>7.5}  {percept:>7.4}",
                if adversarial { "adv" } else { "gauss" },
                eve_accuracy(&eve, &at_eve, &labels)?,
                privacy_leakage_mi(&eve, &at_eve, &labels)?
            );
        }
    }
    Ok(())
}
