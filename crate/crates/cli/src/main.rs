use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cpch::rng::DEFAULT_SEED;
use cpch::{CombiningMethod, LocationFamily};

mod commands;
mod input;

#[derive(Debug, Parser)]
#[command(
    name = "cpch",
    version,
    about = "Conditional partial conjunction tests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Unadjusted conditional p-value for every row of a statistics matrix
    Pvalue(PvalueArgs),
    /// Level-alpha adjusted test for every row
    Test(TestArgs),
    /// BH or Storey over p-values or raw statistics
    Multtest(MulttestArgs),
    /// Solve a(alpha) over a grid of cells and print the table
    AdjustTable(AdjustArgs),
    /// Run a named simulation and print tidy results
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Location family: `normal` or `t:<df>`
    #[arg(long, default_value = "normal")]
    family: LocationFamily,

    /// Monte Carlo draws per mixture component
    #[arg(long)]
    samples: Option<usize>,

    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,

    /// Input CSV (standard input when absent or `-`)
    #[arg(long)]
    input: Option<PathBuf>,

    /// Output file (standard output when absent)
    #[arg(long)]
    output: Option<PathBuf>,

    /// Emit JSON records instead of CSV
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct PvalueArgs {
    #[command(flatten)]
    common: Common,

    #[arg(long, default_value = "fisher")]
    method: CombiningMethod,

    /// Number of base statistics per row (checked against the input)
    #[arg(long)]
    m: Option<usize>,

    #[arg(long)]
    r: usize,
}

#[derive(Debug, Args)]
struct TestArgs {
    #[command(flatten)]
    pv: PvalueArgs,

    #[arg(long, default_value_t = 0.05)]
    alpha: f64,

    /// Adjustment table CSV (bundled table when absent)
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProcedureArg {
    Bh,
    Storey,
}

#[derive(Debug, Args)]
struct MulttestArgs {
    #[command(flatten)]
    common: Common,

    #[arg(long, default_value = "fisher")]
    method: CombiningMethod,

    #[arg(long)]
    m: Option<usize>,

    /// Needed when the input holds raw statistics
    #[arg(long)]
    r: Option<usize>,

    #[arg(long, default_value_t = 0.1)]
    q: f64,

    #[arg(long, value_enum, default_value_t = ProcedureArg::Bh)]
    procedure: ProcedureArg,

    #[arg(long, default_value_t = cpch::multiple_testing::DEFAULT_LAMBDA)]
    lambda: f64,
}

#[derive(Debug, Args)]
struct AdjustArgs {
    #[command(flatten)]
    common: Common,

    /// Values of m, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    m: Vec<usize>,

    /// Values of r (every 2..=m when absent)
    #[arg(long, value_delimiter = ',')]
    r: Vec<usize>,

    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05, 0.1])]
    alpha: Vec<f64>,

    /// Methods, comma separated (both when absent)
    #[arg(long = "method", value_delimiter = ',')]
    methods: Vec<CombiningMethod>,

    /// Replicates used to score each optimizer chain
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Fig1Type1,
    Fig1Power,
    SingleType1,
    SinglePower,
    MixtureFdr,
    Covariate,
    Robustness,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,

    #[arg(long, value_enum)]
    scenario: Scenario,

    #[arg(long, default_value = "fisher")]
    method: CombiningMethod,

    /// Replicates per grid point (FDR scenarios: simulated batches)
    #[arg(long)]
    reps: Option<usize>,

    #[arg(long)]
    m: Option<usize>,

    #[arg(long)]
    r: Option<usize>,

    #[arg(long)]
    r_star: Option<usize>,

    /// Signal sizes, comma separated
    #[arg(long, value_delimiter = ',')]
    theta: Vec<f64>,

    #[arg(long, default_value_t = 0.05)]
    alpha: f64,

    #[arg(long, default_value_t = 0.1)]
    q: f64,

    #[arg(long)]
    table: Option<PathBuf>,

    /// Hypotheses per FDR batch
    #[arg(long, default_value_t = 2_000)]
    hypotheses: usize,

    #[arg(long, default_value_t = 0.5)]
    pi1: f64,

    #[arg(long, default_value_t = 0.9)]
    w: f64,

    #[arg(long, default_value_t = cpch::multiple_testing::DEFAULT_LAMBDA)]
    lambda: f64,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Numerical(msg) => f.write_str(msg),
        }
    }
}

impl From<cpch::Error> for CliError {
    fn from(e: cpch::Error) -> Self {
        use cpch::Error::*;
        match e {
            DegenerateInterval(_) | DegenerateConditioning | Unsupported(_) => {
                CliError::Numerical(e.to_string())
            }
            Domain(_) | MissingAdjustment { .. } | Input(_) => CliError::Usage(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Pvalue(a) => commands::pvalue(&a),
        Command::Test(a) => commands::test(&a),
        Command::Multtest(a) => commands::multtest(&a),
        Command::AdjustTable(a) => commands::adjust_table(&a),
        Command::Simulate(a) => commands::simulate(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                CliError::Numerical(_) => 3,
            })
        }
    }
}
