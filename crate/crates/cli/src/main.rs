//! `sim2real` command-line entry point.
//!
//! Exit codes: 0 success, 1 validation, 2 runtime, 3 numeric error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sim2real::metrics::ExtractorKind;

#[derive(Parser)]
#[command(
    name = "sim2real",
    about = "Simulated cardiac MR, sim2real translation and realism metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Virtual-subject label volumes.
    #[command(subcommand)]
    Phantom(PhantomCmd),
    /// Render label slices to MR images.
    Simulate {
        /// `subjects.json` written by `phantom generate`.
        #[arg(long)]
        subjects: PathBuf,
        /// Sequence parameters (JSON); defaults when omitted.
        #[arg(long)]
        seq: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Tissue property perturbation in [0, 0.3].
        #[arg(long, default_value_t = 0.05)]
        variation: f64,
        /// Mid-ventricular slices per phase.
        #[arg(long, default_value_t = 4)]
        slices: usize,
        /// Also write 16-bit PGM previews.
        #[arg(long)]
        pgm: bool,
    },
    /// Crop, resize and scale images to [0, 1].
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 126)]
        height: usize,
        #[arg(long, default_value_t = 8)]
        margin: usize,
    },
    /// Train or apply a translation model.
    #[command(subcommand)]
    Translate(TranslateCmd),
    /// Realism and segmentation metrics.
    #[command(subcommand)]
    Evaluate(EvaluateCmd),
    /// Run every stage of an experiment config.
    Run(ConfigArgs),
    /// Check a config and list every problem found.
    Validate(ConfigArgs),
    /// Extractors, sequence kinds, stages and threading.
    Info,
    /// Build metadata.
    Version,
    /// Toy FID-reduction experiment over several master seeds.
    Reproduce {
        /// Config to start from; the built-in toy config when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "PATH=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value = "runs/reproduce")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PhantomCmd {
    /// Sample a population and write ED/ES label volumes.
    Generate {
        /// Population spec (JSON); defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "set", value_name = "PATH=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Subcommand)]
enum TranslateCmd {
    Train {
        #[arg(long)]
        sim: PathBuf,
        #[arg(long)]
        real: PathBuf,
        /// Experiment config; its generator, discriminator and translator sections are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "PATH=VALUE")]
        overrides: Vec<String>,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Loss log; defaults to `train_log.csv` next to the checkpoint.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    Apply {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvaluateCmd {
    Fid {
        #[arg(long)]
        sim: PathBuf,
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        translated: Option<PathBuf>,
        #[arg(long, default_value = "random_conv", value_parser = parse_extractor)]
        extractor: ExtractorKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: PathBuf,
    },
    Seg {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON); the default config when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the built-in toy config instead of the default.
    #[arg(long, conflicts_with = "config")]
    toy: bool,
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sim,
    Real,
}

fn parse_extractor(s: &str) -> Result<ExtractorKind, String> {
    ExtractorKind::from_name(s).ok_or_else(|| {
        let names: Vec<_> = ExtractorKind::ALL.iter().map(|k| k.name()).collect();
        format!(
            "unknown extractor {s:?}; expected one of {}",
            names.join(", ")
        )
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
