//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage error.

mod commands;
pub mod overlay;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::model::HeadKind;

#[derive(Debug, Parser)]
#[command(name = "camds", version, about = "Deeply supervised CAM classifier: data, training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus (frames, masks, manifest).
    Synth(SynthArgs),
    /// Split patients into train/validation/test folds.
    Split(SplitArgs),
    /// Train one head on one fold.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one fold's split.
    Eval(EvalArgs),
    /// Pooled ROC curve, AUC and operating points from prediction files.
    Roc(RocArgs),
    /// Krippendorff's alpha of a rating matrix, optionally per-rater metrics.
    Agreement(AgreementArgs),
    /// Export a class activation map heatmap and overlay for one image.
    Cam(CamArgs),
    /// Combine per-fold metric files into one table with an average column.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// key=value file overriding the default corpus parameters.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fold file to write (CSV fold,role,patient_id).
    #[arg(long)]
    pub out: PathBuf,
    /// train,val,test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1", value_delimiter = ',', num_args = 3)]
    pub ratios: Vec<f64>,
    /// Split each class separately.
    #[arg(long)]
    pub stratify: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HeadArg {
    FcBaseline,
    Cam,
    CamDs,
}

impl From<HeadArg> for HeadKind {
    fn from(h: HeadArg) -> Self {
        match h {
            HeadArg::FcBaseline => HeadKind::FcBaseline,
            HeadArg::Cam => HeadKind::Cam,
            HeadArg::CamDs => HeadKind::CamDs,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub folds_file: PathBuf,
    /// 1-based fold index.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub fold: u64,
    #[arg(long, value_enum)]
    pub head: Option<HeadArg>,
    /// key=value file with model and training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_iterations: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra key=value overrides; these win over the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub folds_file: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub fold: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitRole,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct RocArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub predictions: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.95,0.99")]
    pub operating_sens: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    /// CSV: header `rater,<item>...`, one row per rater, empty = missing.
    #[arg(long)]
    pub ratings: PathBuf,
    /// CSV `item,label` with the reference label per item.
    #[arg(long)]
    pub gold: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ClassArg {
    Normal,
    Abnormal,
}

#[derive(Debug, Args)]
pub struct CamArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, value_enum, default_value = "abnormal")]
    pub class: ClassArg,
    /// 1-based resolution; 1 is the highest.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub resolution: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the colour overlay.
    #[arg(long)]
    pub no_overlay: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `metrics.csv` files written by `eval`, one per fold.
    #[arg(long, num_args = 1.., required = true)]
    pub metrics: Vec<PathBuf>,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration: exit code 2.
    Usage(String),
    /// Failure while running: exit code 1.
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Worker cap from `CAMDS_THREADS`, defaulting to the available cores.
pub fn thread_count() -> CliResult<usize> {
    match std::env::var("CAMDS_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| usage(format!("CAMDS_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn execute(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Roc(a) => commands::roc(a),
        Command::Agreement(a) => commands::agreement(a),
        Command::Cam(a) => commands::cam(a),
        Command::Report(a) => commands::report(a),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
