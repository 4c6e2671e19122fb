mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{Config, Overrides};
use output::CliResult;

/// Driver perceived-risk engine: synthetic scenes, risk vectors, feature
/// datasets, consistency labels and the self-training pipeline.
///
/// Every command writes into a fresh output directory together with a
/// `manifest.json` (config hash, seeds, version, input and output digests).
/// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
#[derive(Debug, Parser)]
#[command(name = "dspr", version)]
pub struct Cli {
    /// TOML configuration file; command-line flags override its values.
    #[arg(long, global = true, env = "DSPR_CONFIG")]
    pub config: Option<PathBuf>,
    /// Replace an existing, non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenarios plus a synthetic rater panel file.
    Gen(GenArgs),
    /// Dump per-slot risk (with the DSPR breakdown) for each scenario.
    Risk(RiskArgs),
    /// Build the windowed feature dataset; labeled and split with --panels.
    Features(FeaturesArgs),
    /// Per-frame consistency labels and plurality labels of rating panels.
    Labels(LabelsArgs),
    /// Train the reference classifier on balanced labeled windows.
    Train(TrainArgs),
    /// Run the self-training loop and score it on the true test windows.
    Selftrain(SelfTrainArgs),
    /// Run the same pipeline on features from several risk models.
    Compare(CompareArgs),
    /// Score a saved model on one dataset partition.
    Eval(EvalArgs),
    /// Full study: self-training, baseline, inverse-TTC comparison and
    /// plot-ready CSVs.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// 8 clips of each of the 5 kinds, 15 s at 10 Hz.
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Dspr,
    Ttc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LabelSource {
    /// Consistent labels: true train windows, scored on true test windows.
    True,
    /// Plurality labels of every window on each side of the split.
    Raw,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Generate a predefined suite (seeded with --seed).
    #[arg(long, value_enum, required_unless_present = "kind", conflicts_with = "kind")]
    pub suite: Option<Suite>,
    /// Generate clips of one kind: free_flow, lead_brake, cut_in,
    /// crossing_ped or mixed.
    #[arg(long)]
    pub kind: Option<String>,
    /// Number of clips with --kind.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Clip duration in seconds with --kind.
    #[arg(long, default_value_t = 15.0)]
    pub duration: f64,
    /// Output directory (`scenarios/*.jsonl` and `panels.csv`).
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    /// Scenario file or directory of `.jsonl` scenario files.
    #[arg(long)]
    pub scenarios: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKind::Dspr)]
    pub model: ModelKind,
    /// Output directory with one `<scenario>.csv` per scenario.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Scenario file or directory of `.jsonl` scenario files.
    #[arg(long)]
    pub scenarios: PathBuf,
    /// Rating panel CSV; labels and splits the windows when given.
    #[arg(long)]
    pub panels: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModelKind::Dspr)]
    pub model: ModelKind,
    /// Output dataset directory (`windows.bin`, `index.csv`).
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LabelsArgs {
    /// Rating panel CSV.
    #[arg(long)]
    pub panels: PathBuf,
    /// Scenarios to validate the panels against.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Output directory (`labels.csv`, `summary.json`).
    #[arg(long, short)]
    pub out: PathBuf,
}

/// Where labeled windows come from: a dataset directory, or scenarios plus
/// panels processed with the configured risk parameters.
#[derive(Debug, Args)]
pub struct Source {
    /// Labeled dataset directory written by `features --panels`.
    #[arg(long, conflicts_with_all = ["scenarios", "panels"], required_unless_present_all = ["scenarios", "panels"])]
    pub dataset: Option<PathBuf>,
    /// Scenario file or directory (with --panels).
    #[arg(long, requires = "panels")]
    pub scenarios: Option<PathBuf>,
    /// Rating panel CSV (with --scenarios).
    #[arg(long, requires = "scenarios")]
    pub panels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long, value_enum, default_value_t = LabelSource::True)]
    pub labels: LabelSource,
    /// Output directory (`model.bin`, `metrics.json`).
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelfTrainArgs {
    #[command(flatten)]
    pub source: Source,
    /// External classifier executable, called as
    /// `PROGRAM [ARGS...] <manifest.json>` once per prediction round.
    #[arg(long)]
    pub external: Option<String>,
    /// Argument passed to the external classifier before the manifest path.
    #[arg(long = "external-arg", requires = "external", allow_hyphen_values = true)]
    pub external_args: Vec<String>,
    /// Output directory (`metrics.json`, `audit.json`, `pseudo_labels.csv`,
    /// `adoption.csv` and, for the reference classifier, `model.bin`).
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Scenario file or directory of `.jsonl` scenario files.
    #[arg(long)]
    pub scenarios: PathBuf,
    /// Rating panel CSV.
    #[arg(long)]
    pub panels: PathBuf,
    /// Risk models to compare.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModelKind::Dspr, ModelKind::Ttc])]
    pub models: Vec<ModelKind>,
    /// Output directory (`comparison.json`, `comparison.csv`).
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model artifact written by `train` or `selftrain`.
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled dataset directory.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Partition to score: train_true or test_true.
    #[arg(long, default_value = "test_true")]
    pub partition: String,
    /// Output directory (`metrics.json`, `probabilities.csv`, `confusion.csv`).
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Scenario file or directory; the default suite is generated when absent.
    #[arg(long, requires = "panels")]
    pub scenarios: Option<PathBuf>,
    /// Rating panel CSV (with --scenarios).
    #[arg(long, requires = "scenarios")]
    pub panels: Option<PathBuf>,
    /// Output directory (`report.json`, `metrics.json`, `risk_series.csv`,
    /// `confusion.csv`, `adoption.csv`).
    #[arg(long, short)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut config = Config::load(cli.config.as_deref())?;
    config.apply(&cli.overrides);
    config.validate()?;
    if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global()
            .map_err(|e| output::CliError::config(format!("cannot start {} threads: {e}", config.threads)))?;
    }
    commands::dispatch(&cli.command, &config, cli.force)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dspr: error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
