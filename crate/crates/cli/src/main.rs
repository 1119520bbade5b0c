//! `zherald`: model curves, tag-stream simulation and analysis of heralding
//! on no-click events.
//!
//! ```text
//! zherald model    --eta1p 0.16 --eta2p 0.15 --numax 0.975
//! zherald simulate -c run.conf --out runs/a
//! zherald analyze  runs/a/tags_*.zht1 --out runs/a/analysis
//! zherald scan     -c run.conf --out runs/b
//! zherald compare  runs/a/tags_000.zht1 -c run.conf
//! ```
//!
//! Exit codes: 0 success, 1 I/O, 2 usage, 3 validation, 4 file format or
//! integrity, 5 numerical (empty or undefined estimates, fits, inversions).

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use zherald::config::RunConfig;
use zherald::ErrorKind;

#[derive(Parser)]
#[command(name = "zherald", version, about = "Heralding on no-click events: model, simulate, analyze")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form rates and center-to-wings ratio over a delay grid, as CSV.
    Model(ModelArgs),
    /// Simulate tag files, one per configured delay.
    Simulate(SimulateArgs),
    /// Rates, fits and lag histograms from tag files.
    Analyze(AnalyzeArgs),
    /// Simulate a delay grid and analyze it in one go.
    Scan(ScanArgs),
    /// z-scores of measured rates against the model of a configuration.
    Compare(CompareArgs),
}

#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// Key-value configuration file.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set gamma=2e-4`. Repeatable; applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                RunConfig::parse(&text).map_err(|e| CliError::core(e, Some(path.display().to_string())))?
            }
            None => RunConfig::default(),
        };
        for item in &self.overrides {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(cfg)
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

#[derive(Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Effective heralding efficiency; sets both couplings to 1.
    #[arg(long, value_parser = unit_interval, requires = "eta2p")]
    pub eta1p: Option<f64>,
    /// Effective output efficiency; sets both couplings to 1.
    #[arg(long, value_parser = unit_interval, requires = "eta1p")]
    pub eta2p: Option<f64>,
    /// Peak indistinguishability.
    #[arg(long, value_parser = unit_interval)]
    pub numax: Option<f64>,
    /// Pair probability per pulse.
    #[arg(long, value_parser = unit_interval)]
    pub gamma: Option<f64>,
    /// Coherence width in ps.
    #[arg(long, value_parser = positive)]
    pub tau: Option<f64>,
    /// Grid half-width in units of tau.
    #[arg(long, default_value_t = 3.0, value_parser = positive)]
    pub span: f64,
    /// Grid points; ignored when the configuration lists scan delays.
    #[arg(long, default_value_t = 61, value_parser = clap::value_parser!(u32).range(1..))]
    pub points: u32,
    /// Output file (default: stdout).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Also write each stream as CSV.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Args, Clone)]
pub struct PipelineArgs {
    /// Virtual gate after each pulse, ps.
    #[arg(long, default_value_t = 2000.0, value_parser = positive)]
    pub gate_ps: f64,
    /// Software dead time in pulses after each accepted click.
    #[arg(long, default_value_t = 5)]
    pub dead_pulses: u32,
    /// Longest click spacing, in pulses, kept in the lag histogram.
    #[arg(long, default_value_t = 10)]
    pub lag_max: u64,
    /// Fit every series independently instead of sharing the coincidence-dip shape.
    #[arg(long)]
    pub free_shape: bool,
    /// Peak indistinguishability used to invert the fitted ratios.
    #[arg(long, default_value_t = 0.975, value_parser = unit_interval)]
    pub numax: f64,
    /// Also write each per-pulse event table as CSV.
    #[arg(long)]
    pub tables: bool,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    /// ZHT1 tag files (`.csv` files are read as CSV tag streams).
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Delay of each file in ps, comma separated. Defaults to the manifest
    /// next to the files, else 0.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub delays: Option<Vec<f64>>,
    /// Configuration whose model the rates are compared against.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ScanArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Grid points over +-3 tau when the configuration lists no scan delays.
    #[arg(long, default_value_t = 13, value_parser = clap::value_parser!(u32).range(1..))]
    pub points: u32,
    /// Output directory.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Tag files to measure.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = 2000.0, value_parser = positive)]
    pub gate_ps: f64,
    #[arg(long, default_value_t = 5)]
    pub dead_pulses: u32,
    /// Delay of each file in ps, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub delays: Option<Vec<f64>>,
    /// Output file (default: stdout).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String, std::io::Error),
    Core(zherald::Error, Option<String>),
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, e: std::io::Error) -> Self {
        CliError::Io(path.as_ref().display().to_string(), e)
    }

    pub fn core(e: zherald::Error, context: Option<String>) -> Self {
        CliError::Core(e, context)
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(..) => 1,
            CliError::Usage(_) => 2,
            CliError::Core(e, _) => match e.kind() {
                ErrorKind::Io => 1,
                ErrorKind::Validation => 3,
                ErrorKind::Format => 4,
                ErrorKind::Numerical => 5,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Io(path, e) => write!(f, "{path}: {e}"),
            CliError::Core(e, Some(ctx)) => write!(f, "{ctx}: {e}"),
            CliError::Core(e, None) => write!(f, "{e}"),
        }
    }
}

impl From<zherald::Error> for CliError {
    fn from(e: zherald::Error) -> Self {
        CliError::Core(e, None)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Model(a) => commands::model(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Scan(a) => commands::scan(&a),
        Command::Compare(a) => commands::compare(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("zherald: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
