//! `varcross`: ingest, simulate, fit, test and report crossed rating data.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "varcross", version, about = "Variance decomposition of word-by-model rating data")]
pub struct Cli {
    /// Root seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Directory for outputs.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse raw responses, apply exclusions and write clean datasets.
    Ingest(IngestArgs),
    /// Generate a synthetic dataset with known components.
    Simulate(SimulateArgs),
    /// Fit the crossed random-effects model to a clean dataset.
    Fit(FitArgs),
    /// Parametric null test of the interaction variance.
    Bootstrap(BootstrapArgs),
    /// Write conditional modes of the random effects.
    Blups(BlupArgs),
    /// Within- versus cross-model predictability of interaction fingerprints.
    Specificity(SpecificityArgs),
    /// Correlate model ratings with human norms.
    Align(AlignArgs),
    /// Assemble a report from earlier outputs, or run the synthetic pipeline.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Raw responses: norm,word,model,repetition,decode_mode,raw_text.
    #[arg(long)]
    pub raw: PathBuf,
    /// Directory of norm spec TOML files; built-in scales when omitted.
    #[arg(long)]
    pub specs: Option<PathBuf>,
    /// Refusal patterns, one per line.
    #[arg(long)]
    pub refusals: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub i: usize,
    #[arg(long)]
    pub j: usize,
    #[arg(long)]
    pub k: usize,
    /// Component variances: trait,bias,idiosyncrasy,residual.
    #[arg(long, value_delimiter = ',', default_value = "1,0.25,0.5,1")]
    pub sigma2: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub missing: f64,
    #[arg(long, default_value = "synthetic")]
    pub norm: String,
    /// Output CSV; its sidecar and `<stem>_truth.json` go next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Maximum likelihood instead of REML.
    #[arg(long)]
    pub ml: bool,
    /// Output JSON; defaults to `<out-dir>/<norm>_fit.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BootstrapArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Report (k + 1) / (N + 1) instead of k / N.
    #[arg(long)]
    pub conservative: bool,
}

#[derive(Args, Debug)]
pub struct BlupArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args, Debug)]
pub struct SpecificityArgs {
    /// Directory of `<norm>_iota.csv` files.
    #[arg(long)]
    pub blups: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Directory of `<norm>_means.csv` files for the raw-rating variant.
    #[arg(long)]
    pub raw_ratings: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// Directory of `<norm>_means.csv` and `<norm>_deterministic.csv`.
    #[arg(long)]
    pub ratings: PathBuf,
    /// Directory of `<norm>.csv` files with columns word,value.
    #[arg(long)]
    pub human: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory holding `*_fit.json`, `*_null.json`, `specificity*.json`
    /// and `alignment.json`.
    #[arg(long, conflicts_with = "synthetic")]
    pub from: Option<PathBuf>,
    /// Run simulate → fit → bootstrap → blups → specificity → align first.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 200)]
    pub words: usize,
    #[arg(long, default_value_t = 4)]
    pub models: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Norm ids for the synthetic battery.
    #[arg(long, value_delimiter = ',', default_value = "visual,auditory,arousal,concreteness")]
    pub norms: Vec<String>,
    #[arg(long, default_value_t = 100)]
    pub null_iterations: usize,
    #[arg(long, default_value_t = 0.03)]
    pub missing: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
