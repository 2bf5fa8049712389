use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use elcapture::ScenarioId;
use elcapture_cli::{run, CliError, Command, Format, Model, RunConfig};

#[derive(Parser)]
#[command(name = "elcapture", version, about = "Empirical likelihood abundance estimation for capture-recapture data with missing covariates")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Two-step estimate of the abundance and capture model, with standard errors.
    Fit(DataArgs),
    /// Fit plus the scaled empirical likelihood ratio interval for N.
    Ci(DataArgs),
    /// Bootstrap score test of no one-inflation.
    TestOneInflation(DataArgs),
    /// Monte Carlo study for one of the built-in scenarios.
    Simulate(SimArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Binomial,
    Poisson,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args)]
struct Common {
    /// Significance level a; intervals have level 1 - a.
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    /// Bootstrap replicates for the score test (at least 50).
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Args)]
struct DataArgs {
    /// CSV with columns d, x:<name>, y:<name> and optionally r.
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelArg::Binomial)]
    model: ModelArg,
    /// Number of capture occasions (binomial model).
    #[arg(long = "K")]
    occasions: Option<u32>,
    #[arg(long)]
    one_inflated: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SimArgs {
    /// Scenario A, B, C or D.
    #[arg(long)]
    scenario: ScenarioId,
    /// True abundance; the scenario default when omitted.
    #[arg(long)]
    n0: Option<usize>,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// True one-inflation parameter; the scenario default when omitted.
    #[arg(long)]
    omega0: Option<f64>,
    /// Also fit the one-inflated model (always on for scenario D).
    #[arg(long)]
    one_inflated: bool,
    #[command(flatten)]
    common: Common,
}

fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("ELCAPTURE_THREADS") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| CliError::Config(format!("ELCAPTURE_THREADS: not a count: {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn apply_common(c: &mut RunConfig, common: Common) {
    c.level = common.level;
    c.bootstrap = common.bootstrap;
    c.seed = common.seed;
    c.out = common.out;
    c.format = match common.format {
        FormatArg::Json => Format::Json,
        FormatArg::Csv => Format::Csv,
    };
}

fn sim_config(a: SimArgs) -> RunConfig {
    let mut c = RunConfig::new(Command::Simulate);
    c.scenario = Some(a.scenario);
    c.n0 = a.n0;
    c.reps = a.reps;
    c.omega0 = a.omega0;
    c.one_inflated = a.one_inflated;
    apply_common(&mut c, a.common);
    c
}

fn data_config(command: Command, a: DataArgs) -> RunConfig {
    let mut c = RunConfig::new(command);
    c.input = Some(a.input);
    c.model = match a.model {
        ModelArg::Binomial => Model::Binomial,
        ModelArg::Poisson => Model::Poisson,
    };
    c.occasions = a.occasions;
    c.one_inflated = a.one_inflated;
    apply_common(&mut c, a.common);
    c
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match cli.command {
        Sub::Fit(a) => data_config(Command::Fit, a),
        Sub::Ci(a) => data_config(Command::Ci, a),
        Sub::TestOneInflation(a) => data_config(Command::TestOneInflation, a),
        Sub::Simulate(a) => sim_config(a),
    };
    let result = threads_from_env().and_then(|t| {
        cfg.threads = t;
        #[cfg(feature = "parallel")]
        if let Some(n) = t.filter(|&n| n > 0) {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
        }
        run(&cfg)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
