//! Command-line front end for the `tubekit` library.
//!
//! [`run`] parses arguments, dispatches to a subcommand and maps failures to
//! exit statuses: 0 on success, 1 for domain validation errors, 2 for usage
//! errors and unreadable or malformed input files.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod commands;
pub mod format;

use format::FormatError;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (file schema 1)");

#[derive(Debug, Parser)]
#[command(name = "tubekit", version = VERSION, about = "Tube association, mining, regularization and grounding metrics")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene: detections JSONL plus ground truth
    Simulate(SimulateArgs),
    /// Link per-frame detections into tubes with EMA query memory
    Associate(AssociateArgs),
    /// Score tubes against ground truth and pick the cheapest
    Mine(MineArgs),
    /// Feature and geometric consistency losses of a tube
    Losses(LossesArgs),
    /// Compare analytic loss gradients with central differences
    GradCheck(GradCheckArgs),
    /// Pick the tube with the highest mean confidence as the prediction
    Select(SelectArgs),
    /// tIoU, vIoU and vIoU@tau of predictions against ground truth
    Eval(EvalArgs),
    /// Exposure-bias model of token-by-token box decoding
    Exposure(ExposureArgs),
    /// Merge candidate tubes and emit a pseudo ground-truth tube
    Autolabel(AutolabelArgs),
}

#[derive(Debug, Args)]
struct OutputArg {
    /// Write here instead of standard output
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    seed: u64,
    /// Detections JSONL to write
    #[arg(long)]
    detections: PathBuf,
    /// Ground-truth JSON to write
    #[arg(long)]
    gt: PathBuf,
    /// Also write the latent identity of every detection
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    video_id: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    #[arg(long, default_value_t = 64)]
    frames: usize,
    #[arg(long, default_value_t = 4)]
    objects: usize,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0.05)]
    appearance_drift: f64,
    #[arg(long, default_value_t = 0.125)]
    appearance_walk: f64,
    #[arg(long, default_value_t = 0.01)]
    motion_step: f64,
    #[arg(long, default_value_t = 1.0)]
    distractor_rate: f64,
    #[arg(long, default_value_t = 0.005)]
    detection_noise: f64,
    #[arg(long, default_value_t = 0.05)]
    confidence_noise: f64,
}

#[derive(Debug, Args)]
struct AssociateArgs {
    /// Detections JSONL files, one clip each
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output tube file (single input only)
    #[arg(long, short, conflicts_with = "out_dir")]
    out: Option<PathBuf>,
    /// Directory for `<video_id>.tubes.json` files
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    n_q: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Store each record's appearance feature (needed by `losses`)
    #[arg(long)]
    with_features: bool,
    /// Worker threads for multiple inputs
    #[arg(long, env = "TUBEKIT_JOBS", default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct CostArgs {
    #[arg(long, default_value_t = 1.0)]
    lambda_cls: f64,
    #[arg(long, default_value_t = 5.0)]
    lambda_bbox: f64,
    #[arg(long, default_value_t = 3.0)]
    lambda_giou: f64,
    #[arg(long, default_value_t = 2.0)]
    lambda_temp: f64,
}

#[derive(Debug, Args)]
struct MineArgs {
    #[arg(long)]
    tubes: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[command(flatten)]
    weights: CostArgs,
    /// Also write the winning tube as a one-tube file
    #[arg(long)]
    emit_tube: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArg,
}

#[derive(Debug, Args)]
struct TubeChoice {
    #[arg(long)]
    tubes: PathBuf,
    /// Slot to use; defaults to the first tube in the file
    #[arg(long)]
    slot: Option<usize>,
}

#[derive(Debug, Args)]
struct LossesArgs {
    #[command(flatten)]
    tube: TubeChoice,
    #[arg(long, default_value_t = 2.0)]
    lambda_temp: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_feat: f64,
    /// Include analytic gradients in the report
    #[arg(long)]
    gradients: bool,
    #[command(flatten)]
    output: OutputArg,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    #[command(flatten)]
    tube: TubeChoice,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-6)]
    h: f64,
    #[command(flatten)]
    output: OutputArg,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    tubes: PathBuf,
    /// Predicted interval as `TS:TE` (inclusive)
    #[arg(long, conflicts_with = "gt")]
    interval: Option<String>,
    /// Take the predicted interval from this ground truth
    #[arg(long)]
    gt: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArg,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Prediction JSONL
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth files (one or more documents each)
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    /// vIoU thresholds
    #[arg(long = "tau", default_values_t = [0.3, 0.5])]
    taus: Vec<f64>,
    /// Write the five-part drift profile as CSV
    #[arg(long)]
    drift: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArg,
}

#[derive(Debug, Args)]
struct ExposureArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long, default_value_t = 4)]
    tokens_per_frame: usize,
    /// Per-token error probability
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0.05)]
    drift_step: f64,
    /// Decode this ground truth instead of a static centered box
    #[arg(long)]
    gt: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArg,
}

#[derive(Debug, Args)]
struct AutolabelArgs {
    #[arg(long)]
    candidates: PathBuf,
    /// Queried interval as `TS:TE` (inclusive)
    #[arg(long)]
    interval: String,
    #[arg(long, default_value_t = 0.8)]
    appearance_threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    coverage_threshold: f64,
    #[command(flatten)]
    output: OutputArg,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Format(FormatError),
    Domain(String),
    Io(String),
}

impl CliError {
    fn status(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) | CliError::Format(_) | CliError::Io(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Format(e) => write!(f, "{e}"),
            CliError::Domain(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Format(e)
    }
}

impl From<tubekit::Error> for CliError {
    fn from(e: tubekit::Error) -> Self {
        CliError::Domain(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

/// Runs the tool with `argv` (program name first) and returns the exit status.
pub fn run<I, S>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(sink, "{text}");
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a, stdout),
        Command::Associate(a) => commands::associate(a, stdout),
        Command::Mine(a) => commands::mine(a, stdout),
        Command::Losses(a) => commands::losses(a, stdout),
        Command::GradCheck(a) => commands::grad_check(a, stdout),
        Command::Select(a) => commands::select(a, stdout),
        Command::Eval(a) => commands::eval(a, stdout),
        Command::Exposure(a) => commands::exposure(a, stdout),
        Command::Autolabel(a) => commands::autolabel(a, stdout, stderr),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "tubekit: {e}");
            e.status()
        }
    }
}
