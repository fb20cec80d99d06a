//! `atlasseg`: phantom generation, preprocessing, segmentation, evaluation,
//! grid search and method comparison.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use atlasseg::Error;
use clap::{Parser, Subcommand};

use settings::RegistrationFlags;

#[derive(Debug, Parser)]
#[command(
    name = "atlasseg",
    version,
    about = "Atlas-based segmentation of DENSE MR bundles"
)]
pub struct Cli {
    /// Worker threads for per-subject and per-template work (0 = logical cores)
    #[arg(long, global = true, env = "ATLASSEG_JOBS", default_value_t = 0)]
    pub jobs: usize,
    /// JSON config file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log level: error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "info")]
    pub log_level: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic atlas bank and test set with known truth
    Phantom(PhantomArgs),
    /// Histogram-equalize magnitudes and reduce gate stacks
    Preprocess(PreprocessArgs),
    /// Segment subjects with an atlas bank
    Segment(SegmentArgs),
    /// Score predicted masks against true masks
    Evaluate(EvaluateArgs),
    /// Search the number of templates and the fusion threshold
    Gridsearch(GridsearchArgs),
    /// Compare atlas-based and network predictions per subject
    Compare(CompareArgs),
}

#[derive(Debug, clap::Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub bank_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Truth warp bump amplitude in pixels
    #[arg(long)]
    pub deform_mag: Option<f64>,
    /// Store gate stacks and derive the mean/peak channels from them
    #[arg(long)]
    pub emit_gates: bool,
}

#[derive(Debug, clap::Args)]
pub struct PreprocessArgs {
    /// Directory of subject bundles
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Histogram bins
    #[arg(long)]
    pub bins: Option<usize>,
    /// Continue past subjects that fail; the exit code still reports the failure
    #[arg(long)]
    pub keep_going: bool,
}

#[derive(Debug, clap::Args)]
pub struct SegmentArgs {
    /// Atlas bank directory
    #[arg(long)]
    pub bank: PathBuf,
    /// Directory of subjects to segment
    #[arg(long)]
    pub subjects: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of templates to fuse
    #[arg(long)]
    pub n: Option<usize>,
    /// Fusion threshold in (0, 1)
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Allow a bank entry with the subject's own id as a template
    #[arg(long)]
    pub include_self: bool,
    /// Also write every template registration
    #[arg(long)]
    pub save_registrations: bool,
    #[command(flatten)]
    pub registration: RegistrationFlags,
}

#[derive(Debug, clap::Args)]
pub struct EvaluateArgs {
    /// Subjects with true masks (and peak images for biomarkers)
    #[arg(long)]
    pub subjects: PathBuf,
    /// Directory with `<id>/hard_mask.u8` or `<id>/mask.u8` per subject
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Leave out peak values above this cutoff
    #[arg(long)]
    pub csf_cutoff: Option<f64>,
}

#[derive(Debug, clap::Args)]
pub struct GridsearchArgs {
    /// Atlas bank directory
    #[arg(long)]
    pub bank: PathBuf,
    /// Validation subjects; leave-one-out over the bank when omitted
    #[arg(long)]
    pub subjects: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub n_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Use only the first k subjects
    #[arg(long)]
    pub max_subjects: Option<usize>,
    #[arg(long)]
    pub csf_cutoff: Option<f64>,
    #[command(flatten)]
    pub registration: RegistrationFlags,
}

#[derive(Debug, clap::Args)]
pub struct CompareArgs {
    /// Subjects with true masks and peak images
    #[arg(long)]
    pub truth: PathBuf,
    /// Atlas-based predictions (`<id>/hard_mask.u8` or `<id>/mask.u8`)
    #[arg(long)]
    pub ab: PathBuf,
    /// Network predictions in the same layout
    #[arg(long)]
    pub nn: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csf_cutoff: Option<f64>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Registration(_) | Error::Segmentation(_) => 1,
        Error::Config(_) => 3,
        Error::InvalidInput(_)
        | Error::Shape(_)
        | Error::Resolution(_)
        | Error::EmptyRegion(_)
        | Error::Format(_) => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            log::error!("cannot start worker pool: {e}");
            return ExitCode::from(3);
        }
    };
    match pool.install(|| commands::run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
