//! The `eventvad` command line: segment, score, evaluate, sweep and synth.
//!
//! Exit codes: 0 success, 2 input or contract error, 3 scorer transport
//! failure, 4 degenerate evaluation labels.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod error;

pub use config::{ConfigArgs, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "eventvad",
    version,
    about = "Event-aware video anomaly detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a feature container into events; writes boundary JSON and curve CSV
    Segment(SegmentArgs),
    /// Segment and score videos with the event scorer; writes result JSON
    Score(ScoreArgs),
    /// Frame-level AUC/AP of a directory of results against annotations
    Evaluate(EvaluateArgs),
    /// Run the alpha × gamma grid over a directory of feature containers
    Sweep(SweepArgs),
    /// Write synthetic feature containers with planted boundaries
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// `.evf` feature container
    pub features: PathBuf,
    /// Directory for `{video}.boundaries.json` and `{video}.curve.csv`
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Also dump graph edges as JSON
    #[arg(long, value_name = "PATH")]
    pub graph_dump: Option<PathBuf>,
    /// Also dump frame similarity before and after propagation as JSON
    #[arg(long, value_name = "PATH")]
    pub similarity_dump: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// One or more `.evf` feature containers
    #[arg(required = true)]
    pub features: Vec<PathBuf>,
    /// Directory of decoded frames (`{index:06}.jpg`), or a parent holding one
    /// such directory per video id
    #[arg(long, value_name = "DIR")]
    pub media: Option<PathBuf>,
    /// Directory for `{video}.json` results and `{video}.partial.json` reports
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of result JSON files written by `score`
    pub results_dir: PathBuf,
    /// Annotation CSV: `video_id,total_frames[,start,end]`
    pub annotations: PathBuf,
    /// Write the metric report here instead of stdout
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Also write corpus ROC points as `fpr,tpr` CSV
    #[arg(long, value_name = "PATH")]
    pub roc: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Directory of `.evf` containers
    pub features_dir: PathBuf,
    /// Annotation CSV; with a scorer configured the grid holds AUC values
    #[arg(long, value_name = "PATH")]
    pub annotations: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.25, 0.5, 0.75, 1.0])]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0])]
    pub gammas: Vec<f64>,
    /// Boundary matching tolerance in frames for the F1 grid
    #[arg(long, default_value_t = 30)]
    pub tolerance: usize,
    /// Write the grid CSV here instead of stdout
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of videos; video i uses seed `seed + i`
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 2000)]
    pub frames: usize,
    #[arg(long, default_value_t = 4)]
    pub regimes: usize,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.02)]
    pub jitter: f64,
    /// Mean flow magnitude of each regime, in pixels per frame
    #[arg(long, default_value_t = 1.0)]
    pub flow_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub flow_seed: u64,
    #[arg(long, default_value_t = 30.0)]
    pub fps: f32,
    #[arg(long, default_value = "synth")]
    pub prefix: String,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Segment(args) => commands::segment(&args),
        Command::Score(args) => commands::score(&args),
        Command::Evaluate(args) => commands::evaluate(&args),
        Command::Sweep(args) => commands::sweep(&args),
        Command::Synth(args) => commands::synth(&args),
    }
}
