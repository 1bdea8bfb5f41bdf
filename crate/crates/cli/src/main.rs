//! `engagekit` command-line pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use engagekit::trainer::{Mode, Target};
use engagekit::ErrorClass;

#[derive(Debug, Parser)]
#[command(name = "engagekit", version, about = "Short-video engagement metrics and prediction")]
#[command(after_help = "Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus: events, metas, ground truth, features and manifest.
    Synth(SynthArgs),
    /// Reduce watch events to per-video records.
    Aggregate(AggregateArgs),
    /// Fit the duration envelope and annotate records with NAWP.
    FitNorm(FitNormArgs),
    /// Train the fusion model on a labelled manifest.
    Train(TrainArgs),
    /// Score every video in a manifest with a trained model.
    Predict(PredictArgs),
    /// Compare predictions against manifest labels.
    Eval(EvalArgs),
    /// Distribution and correlation report for NAWP-annotated records.
    Report(ReportArgs),
    /// Train joint, NAWP-only and ECR-only models and tabulate held-out scores.
    CompareJoint(CompareArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_videos: Option<usize>,
    #[arg(long)]
    views_per_video: Option<usize>,
    #[arg(long)]
    frame_rate: Option<f64>,
    #[arg(long)]
    feature_noise: Option<f64>,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    metas: PathBuf,
    /// Output records (JSON lines).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    min_views: u64,
    #[arg(long, default_value_t = 5.0)]
    ecr_threshold: f64,
    #[arg(long, default_value_t = 10.0)]
    min_duration: f64,
    #[arg(long, default_value_t = 60.0)]
    max_duration: f64,
    /// Number of parallel shards; the result does not depend on it.
    #[arg(long, default_value_t = 1)]
    shards: usize,
    /// Treat malformed event lines as fatal instead of skipping them.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct FitNormArgs {
    /// Records produced by `aggregate`.
    #[arg(long)]
    records: PathBuf,
    /// Envelope JSON output.
    #[arg(long)]
    out_envelope: PathBuf,
    /// NAWP-annotated records output.
    #[arg(long)]
    out_records: PathBuf,
    #[arg(long, default_value_t = 0.97)]
    quantile_tau: f64,
    #[arg(long, default_value_t = 1.0)]
    bin_width: f64,
    #[arg(long, default_value_t = 30)]
    min_bin_count: usize,
    #[arg(long, default_value_t = 10.0)]
    min_duration: f64,
    #[arg(long, default_value_t = 60.0)]
    max_duration: f64,
    /// Skip fitting and use the reference envelope 0.556 d + 5.64.
    #[arg(long)]
    reference: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Joint,
    #[value(name = "nawp_only", alias = "nawp-only")]
    NawpOnly,
    #[value(name = "ecr_only", alias = "ecr-only")]
    EcrOnly,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Joint => Mode::Joint,
            ModeArg::NawpOnly => Mode::NawpOnly,
            ModeArg::EcrOnly => Mode::EcrOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TargetArg {
    Nawp,
    Awt,
    Awp,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Nawp => Target::Nawp,
            TargetArg::Awt => Target::Awt,
            TargetArg::Awp => Target::Awp,
        }
    }
}

/// Training settings shared by `train` and `compare-joint`. Flags override
/// values from `--config`.
#[derive(Debug, Args)]
struct TrainOptions {
    /// Labelled manifest (JSON lines).
    #[arg(long)]
    manifest: PathBuf,
    /// JSON file mirroring the training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_enum)]
    target: Option<TargetArg>,
    #[arg(long)]
    duration_as_input: bool,
    /// Comma-separated enabled feature kinds, e.g. `semantic,action,text`.
    #[arg(long)]
    features: Option<String>,
    #[arg(long)]
    ecr_causal_mask: bool,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    eval_interval: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    opts: TrainOptions,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Output directory for checkpoint, resolved config, metric log and
    /// held-out predictions.
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint (must come from the same configuration).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many completed steps; resume later with `--resume`.
    #[arg(long)]
    stop_after: Option<u64>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Predictions (JSON lines of video_id, nawp_hat, ecr_hat).
    #[arg(long)]
    predictions: PathBuf,
    /// Labelled manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    topk_percent: f64,
    /// Also report duration-grouped SRCC with groups this many seconds wide.
    #[arg(long)]
    group_width: Option<f64>,
    /// Label the first prediction column is compared against.
    #[arg(long, value_enum, default_value = "nawp")]
    target: TargetArg,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// NAWP-annotated records from `fit-norm`.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    opts: TrainOptions,
    /// Output table (JSON).
    #[arg(long)]
    out: PathBuf,
}

/// A command line that parsed but cannot be acted on.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<engagekit::Error>() {
            return match e.class() {
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Aggregate(a) => commands::aggregate(a),
        Command::FitNorm(a) => commands::fit_norm(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => commands::report(a),
        Command::CompareJoint(a) => commands::compare_joint(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
