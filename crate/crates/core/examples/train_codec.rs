//! Trains the semantic codec on the synthetic garment set, reports the
//! reconstruction MSE over an AWGN channel and writes a checkpoint.
//!
//! ```text
//! cargo run --release --example train_codec -- [out.smsh]
//! ```

use semshield::codec::communication_mse;
use semshield::data::DatasetSource;
use semshield::harness::config::CodecJob;
use semshield::harness::experiment::run_codec_job;
use semshield::harness::{save_checkpoint, Model};
use semshield::signal::{awgn, RngStream};

fn main() -> semshield::Result<()> {
    let mut job = CodecJob::default();
    job.dataset = DatasetSource::Synthetic {
        train: 4000,
        test: 500,
        seed: 2024,
    };
    job.train.epochs = 4;
    let (codec, report) = run_codec_job(&job)?;
    println!(
        "trained {} epochs: loss {:.4} -> {:.4}",
        report.epoch_losses.len(),
        report.initial_loss,
        report.final_loss
    );

    let test = job.dataset.load_test()?;
    for snr_db in [0.0, 5.0, 10.0, 20.0] {
        let mut rng = RngStream::derived(7, "example_channel", snr_db as u64);
        let mse = communication_mse(&codec, &test, |_, z| awgn(z, snr_db, &mut rng))?;
        println!("snr {snr_db:>4} dB  mse {mse:.5}");
    }

    if let Some(out) = std::env::args().nth(1) {
        save_checkpoint(&Model::Codec(codec), out.as_ref())?;
        println!("wrote {out}");
    }
    Ok(())
}
