use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::ConfigFile;

/// Exit 1: a run diverged or a property failed. Exit 2: bad invocation.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failure(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

impl From<flowadam::Error> for CliError {
    fn from(e: flowadam::Error) -> Self {
        match e {
            flowadam::Error::InvalidConfig(_)
            | flowadam::Error::InvalidScenario(_)
            | flowadam::Error::Unknown { .. } => CliError::Usage(e.to_string()),
            other => CliError::Failure(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "flowadam",
    version,
    about = "FlowAdam benchmarks, ablations and property checks"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// Run seeds 1..=N.
    #[arg(long, global = true, conflicts_with = "seed_list")]
    pub seeds: Option<u64>,
    /// Explicit comma-separated seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seed_list: Option<Vec<u64>>,
    /// Trigger preset.
    #[arg(long, global = true)]
    pub mode: Option<flowadam::Mode>,
    /// Output directory (default ./results/<timestamp>/).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for the seed pool.
    #[arg(long, global = true, env = "FLOWFLOW_THREADS")]
    pub threads: Option<usize>,
    /// Exit 0 even when a run diverges.
    #[arg(long, global = true)]
    pub allow_divergence: bool,
    /// key=value config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a problem against a list of optimizers.
    Bench(BenchArgs),
    /// Soft versus hard momentum injection on two spirals.
    AblationInjection(AblationArgs),
    /// Sweep gamma or alpha_s on a completion scenario.
    Sweep(SweepArgs),
    /// Run the property suite.
    Verify(VerifyArgs),
    /// Rebuild the summary table from aggregate files in a directory.
    Summarize(SummarizeArgs),
}

#[derive(Args, Debug, Default)]
pub struct BenchArgs {
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub scenario: Option<String>,
    /// Comma-separated optimizer names (default adam,flowadam).
    #[arg(long, value_delimiter = ',')]
    pub optimizers: Option<Vec<String>>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Observation-noise std for completion scenarios.
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Optimizer the improvement column is measured against (default adam).
    #[arg(long)]
    pub baseline: Option<String>,
    /// Also write each seed's generated data set as CSV under data/.
    #[arg(long)]
    pub export_data: bool,
}

#[derive(Args, Debug, Default)]
pub struct AblationArgs {
    #[arg(long)]
    pub steps: Option<u64>,
    /// `both` or `soft-only`.
    #[arg(long)]
    pub injection: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct SweepArgs {
    /// `gamma` or `alpha_s`.
    #[arg(long)]
    pub param: Option<String>,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub grid: Option<Vec<f64>>,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct VerifyArgs {
    /// One JSON object per property instead of text lines.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct SummarizeArgs {
    pub dir: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.global.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Bench(a) => commands::bench(&cli.global, &file, a),
        Command::AblationInjection(a) => commands::ablation_injection(&cli.global, &file, a),
        Command::Sweep(a) => commands::sweep(&cli.global, &file, a),
        Command::Verify(a) => commands::verify(&file, a),
        Command::Summarize(a) => commands::summarize(&a.dir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Failure(m) => eprintln!("failed: {m}"),
            }
            ExitCode::from(e.code())
        }
    }
}
