//! `semshield` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};

use super::checkpoint::{load_codec, save_checkpoint, Model};
use super::config::{load_experiment, load_job, CodecJob, DenoiserJob, EveJob};
use super::experiment::{run_codec_job, run_denoiser_job, run_eve_job, run_experiment, EvalSet, Models};
use super::report::{aggregate, emit_report, evaluate, read_metrics, summary_table, RunMeta};
use super::VERSION;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_MISSING_ARTIFACT: i32 = 4;
pub const EXIT_IO: i32 = 5;
pub const EXIT_CORRUPT_ARTIFACT: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "semshield", version, about = "Secure semantic transmission experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct JobArgs {
    /// JSON job file; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Override a config field, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the semantic codec.
    TrainCodec(JobArgs),
    /// Train the latent denoiser on a codec's latents.
    TrainDenoiser(JobArgs),
    /// Train the eavesdropper's attribute classifier.
    TrainEve(JobArgs),
    /// Run one experiment and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Summarise one or more metrics.csv files.
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

/// Exit status for an error, by its innermost cause.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config(_) | Error::Json(_) | Error::Csv(_) => EXIT_CONFIG,
        Error::MissingArtifact(_) => EXIT_MISSING_ARTIFACT,
        Error::Io(_) => EXIT_IO,
        Error::Checkpoint(_) | Error::Checksum | Error::KindMismatch { .. } | Error::VersionMismatch { .. } => {
            EXIT_CORRUPT_ARTIFACT
        }
        _ => EXIT_RUNTIME,
    }
}

fn print_resolved<T: Serialize>(what: &str, cfg: &T, seeds: &str) -> Result<()> {
    println!("{VERSION}");
    println!("resolved {what} config:\n{}", serde_json::to_string_pretty(cfg)?);
    println!("seed: {seeds}");
    Ok(())
}

fn save(model: Model, out: &Path) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_checkpoint(&model, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::TrainCodec(a) => {
            let job: CodecJob = load_job(a.config.as_deref(), &a.overrides)?;
            job.train.validate().map_err(|e| Error::Config(e.to_string()))?;
            print_resolved("codec", &job, &job.train.seed.to_string())?;
            let (model, report) = run_codec_job(&job)?;
            println!("loss {:.6} -> {:.6}", report.initial_loss, report.final_loss);
            save(Model::Codec(model), &a.out)
        }
        Command::TrainDenoiser(a) => {
            let job: DenoiserJob = load_job(a.config.as_deref(), &a.overrides)?;
            job.train.validate().map_err(|e| Error::Config(e.to_string()))?;
            print_resolved("denoiser", &job, &job.train.seed.to_string())?;
            let codec = load_codec(&job.codec)?;
            let (model, report) = run_denoiser_job(&job, &codec)?;
            println!("loss {:.6} -> {:.6}", report.initial_loss, report.final_loss);
            save(Model::Denoiser(model), &a.out)
        }
        Command::TrainEve(a) => {
            let job: EveJob = load_job(a.config.as_deref(), &a.overrides)?;
            job.train.validate().map_err(|e| Error::Config(e.to_string()))?;
            print_resolved("eve", &job, &job.train.seed.to_string())?;
            let codec = load_codec(&job.codec)?;
            let (model, report) = run_eve_job(&job, &codec)?;
            println!(
                "loss {:.6} -> {:.6}, validation accuracy {:.4}",
                report.train.initial_loss, report.train.final_loss, report.validation_accuracy
            );
            save(Model::Eve(model), &a.out)
        }
        Command::Run {
            config,
            out,
            overrides,
        } => {
            let cfg = load_experiment(&config, &overrides)?;
            let seeds: Vec<String> = cfg.seeds.iter().map(u64::to_string).collect();
            print_resolved("experiment", &cfg, &seeds.join(","))?;
            let models = Models::load(&cfg)?;
            let eval = EvalSet::from_config(&cfg, &models.codec)?;
            let records = run_experiment(&cfg, &models, &eval)?;
            let cfg_value = serde_json::to_value(&cfg)?;
            let files = emit_report(
                &records,
                &out,
                &cfg.weights,
                &RunMeta {
                    version: VERSION,
                    config: &cfg_value,
                },
            )?;
            print!("{}", summary_table(&aggregate(&records)));
            for v in &files.verdicts {
                println!("{v}");
            }
            println!("wrote {}", files.metrics.display());
            Ok(())
        }
        Command::Report { csv } => {
            let mut records = Vec::new();
            for path in &csv {
                records.extend(read_metrics(path)?);
            }
            if records.is_empty() {
                return Err(Error::Config("no metrics rows to report".into()));
            }
            print!("{}", summary_table(&aggregate(&records)));
            for v in evaluate(&records, &Default::default(), None)? {
                println!("{v}");
            }
            Ok(())
        }
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit
/// status. Diagnostics go to stderr.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            exit_code(&e)
        }
    }
}
