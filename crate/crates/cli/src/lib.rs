//! Command implementations behind the `elcapture` binary.
//!
//! Each command reads a [`RunConfig`], writes a versioned report and maps
//! failures to a [`CliError`] whose [`CliError::exit_code`] identifies the
//! error class.

pub mod input;
pub mod report;

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use elcapture::inference::InferenceError;
use elcapture::sim::{SimError, StudyOptions};
use elcapture::workflow::{self, step_one, step_two};
use elcapture::{
    one_inflation_test, scaled_ci, CaptureModelSpec, DataError, ElError, Exec, FitOptions, MissingnessError, ScenarioId,
    SimulationScenario,
};
use serde::Serialize;
use thiserror::Error;

pub use input::{read_dataset, read_dataset_path, write_dataset, InputError};
pub use report::{CiReport, FitReport, Report, TestReport, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Fit,
    Ci,
    TestOneInflation,
    Simulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Binomial,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

/// Everything a command needs; embedded verbatim in every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub model: Model,
    /// Number of capture occasions for the binomial model.
    pub occasions: Option<u32>,
    pub one_inflated: bool,
    /// Significance level `a`: intervals have level `1 - a`, tests reject at `a`.
    pub level: f64,
    pub bootstrap: Option<usize>,
    pub seed: u64,
    pub reps: usize,
    pub scenario: Option<ScenarioId>,
    pub n0: Option<usize>,
    pub omega0: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: Format,
    /// Worker cap from `ELCAPTURE_THREADS`.
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            input: None,
            model: Model::Binomial,
            occasions: None,
            one_inflated: false,
            level: 0.05,
            bootstrap: None,
            seed: 1,
            reps: 500,
            scenario: None,
            n0: None,
            omega0: None,
            out: None,
            format: Format::Json,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("--level must lie in (0, 1)");
        }
        if let Some(b) = self.bootstrap {
            if b < elcapture::inference::MIN_BOOTSTRAP {
                return Err(CliError::Config(format!(
                    "--bootstrap must be at least {}, got {b}",
                    elcapture::inference::MIN_BOOTSTRAP
                )));
            }
        }
        if self.reps == 0 {
            return bad("--reps must be at least 1");
        }
        if self.threads == Some(0) {
            return bad("ELCAPTURE_THREADS must be at least 1");
        }
        match self.command {
            Command::Simulate => {
                if self.scenario.is_none() {
                    return bad("simulate needs --scenario");
                }
                if self.n0 == Some(0) {
                    return bad("--n0 must be at least 1");
                }
                if let Some(w) = self.omega0 {
                    if !(w > 0.0 && w <= 1.0) {
                        return bad("--omega0 must lie in (0, 1]");
                    }
                }
            }
            _ => {
                if self.input.is_none() {
                    return bad("an input CSV is required");
                }
                match (self.model, self.occasions) {
                    (Model::Binomial, None) => return bad("--model binomial needs --K"),
                    (Model::Binomial, Some(0)) => return bad("--K must be at least 1"),
                    (Model::Poisson, Some(_)) => return bad("--K applies only to the binomial model"),
                    _ => {}
                }
                if self.command == Command::TestOneInflation && self.one_inflated {
                    return bad("test-one-inflation fits the model without one-inflation; drop --one-inflated");
                }
            }
        }
        Ok(())
    }

    pub fn spec(&self, dim_x: usize, dim_y: usize) -> CaptureModelSpec {
        let spec = match self.model {
            Model::Binomial => CaptureModelSpec::binomial(self.occasions.unwrap_or(0), dim_x, dim_y),
            Model::Poisson => CaptureModelSpec::poisson(dim_x, dim_y),
        };
        spec.with_one_inflation(self.one_inflated)
    }

    pub fn exec(&self) -> Exec {
        if self.threads == Some(1) || !Exec::parallel_available() {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("I/O: {0}")]
    Io(#[from] io::Error),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("missingness model: {0}")]
    Missingness(#[from] MissingnessError),
    #[error("estimation: {0}")]
    El(ElError),
    #[error("inference: {0}")]
    Inference(InferenceError),
    #[error("estimation did not converge: {0}")]
    NotConverged(String),
    #[error("simulation: {0}")]
    Simulation(#[from] SimError),
}

impl From<ElError> for CliError {
    fn from(e: ElError) -> Self {
        match e {
            ElError::Data(d) => CliError::Data(d),
            e => CliError::El(e),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::El(e) => e.into(),
            InferenceError::TooFewBootstrap(b) => CliError::Config(format!("too few bootstrap replicates: {b}")),
            e => CliError::Inference(e),
        }
    }
}

impl From<workflow::Error> for CliError {
    fn from(e: workflow::Error) -> Self {
        match e {
            workflow::Error::Data(e) => e.into(),
            workflow::Error::Missingness(e) => e.into(),
            workflow::Error::El(e) => e.into(),
            workflow::Error::Inference(e) => e.into(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.into())
    }
}

impl CliError {
    /// 2 configuration, parse or I/O; 3 invalid data; 4 numerical failure;
    /// 5 bootstrap failure; 6 too many failed simulation replicates.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) | CliError::Io(_) => 2,
            CliError::Data(_) => 3,
            CliError::Missingness(_) | CliError::El(_) | CliError::NotConverged(_) => 4,
            CliError::Inference(InferenceError::BootstrapFailure { .. }) => 5,
            CliError::Inference(_) => 4,
            CliError::Simulation(SimError::TooManyFailures { .. }) => 6,
            CliError::Simulation(SimError::Config(_)) => 2,
        }
    }
}

fn fit_options() -> FitOptions {
    FitOptions::default()
}

fn load(config: &RunConfig) -> Result<(elcapture::CaptureDataset, CaptureModelSpec), CliError> {
    let path = config.input.as_deref().ok_or_else(|| CliError::Config("an input CSV is required".into()))?;
    let ds = read_dataset_path(path)?;
    let spec = config.spec(ds.dim_x(), ds.dim_y());
    Ok((ds, spec))
}

fn fit_dataset(config: &RunConfig) -> Result<workflow::TwoStepFit, CliError> {
    let (ds, spec) = load(config)?;
    let (ds, mfit) = step_one(&ds, &spec)?;
    Ok(step_two(ds, mfit, &spec, &fit_options())?)
}

fn check_converged(two: &workflow::TwoStepFit) -> Result<(), CliError> {
    if two.fit.converged {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!(
            "termination {}, gradient norm {:.3e}",
            two.fit.trace.termination, two.fit.trace.gradient_norm
        )))
    }
}

/// Two-step fit with standard errors.
pub fn cmd_fit(config: &RunConfig) -> Result<(Report<FitReport>, Result<(), CliError>), CliError> {
    config.validate()?;
    let two = fit_dataset(config)?;
    let var = two.variance()?;
    let result = FitReport::new(&two, Some(&var));
    Ok((Report::new(config, result), check_converged(&two)))
}

/// Fit plus the scaled EL ratio interval at level `1 - a`.
pub fn cmd_ci(config: &RunConfig) -> Result<(Report<CiReport>, Result<(), CliError>), CliError> {
    config.validate()?;
    let two = fit_dataset(config)?;
    let var = two.variance()?;
    let ci = scaled_ci(&two.problem, &two.fit, &var, &[1.0 - config.level], &fit_options())?;
    let result = CiReport { fit: FitReport::new(&two, Some(&var)), interval: ci[0] };
    Ok((Report::new(config, result), check_converged(&two)))
}

/// Bootstrap score test of `omega = 1`.
pub fn cmd_test(config: &RunConfig) -> Result<(Report<TestReport>, Result<(), CliError>), CliError> {
    config.validate()?;
    let b = config.bootstrap.unwrap_or(DEFAULT_BOOTSTRAP);
    let two = fit_dataset(config)?;
    let fit = FitReport::new(&two, None);
    let converged = check_converged(&two);
    let test = one_inflation_test(&two.problem, &two.fit, b, config.seed, config.exec(), &fit_options())?;
    let result = TestReport::new(fit, &test, config.level);
    Ok((Report::new(config, result), converged))
}

/// Default bootstrap size for the score test.
pub const DEFAULT_BOOTSTRAP: usize = 500;

/// Runs a simulation study. Returns the report; QQ data go to
/// [`qq_path`] when an output path is given.
pub fn cmd_simulate(config: &RunConfig) -> Result<(Report<elcapture::SimulationReport>, Result<(), CliError>), CliError> {
    config.validate()?;
    let id = config.scenario.ok_or_else(|| CliError::Config("simulate needs --scenario".into()))?;
    let mut scenario = SimulationScenario::new(id).with_reps(config.reps).with_seed(config.seed);
    if let Some(n0) = config.n0 {
        scenario = scenario.with_n0(n0);
    }
    if let Some(w) = config.omega0 {
        scenario = scenario.with_omega0(w);
    }
    let opts = StudyOptions {
        inflated: config.one_inflated || id == ScenarioId::D,
        ratio_at_truth: true,
        score: true,
        score_test_bootstrap: config.bootstrap,
        ..StudyOptions::default()
    };
    let report = elcapture::run_study(&scenario, &opts, config.exec())?;
    Ok((Report::new(config, report), Ok(())))
}

/// Sibling path for the QQ table: `<stem>.qq.csv`.
pub fn qq_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.qq.csv"))
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(io::BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

/// Runs the configured command and writes its output. The returned error, if
/// any, is raised after the report has been written when the failure is a
/// flag on an otherwise complete computation.
pub fn run(config: &RunConfig) -> Result<(), CliError> {
    let out = config.out.as_deref();
    let status = match config.command {
        Command::Fit => {
            let (r, s) = cmd_fit(config)?;
            r.write(sink(out)?, config.format)?;
            s
        }
        Command::Ci => {
            let (r, s) = cmd_ci(config)?;
            r.write(sink(out)?, config.format)?;
            s
        }
        Command::TestOneInflation => {
            let (r, s) = cmd_test(config)?;
            r.write(sink(out)?, config.format)?;
            s
        }
        Command::Simulate => {
            let (r, s) = cmd_simulate(config)?;
            eprintln!("simulation finished in {:.1} s", r.result.metadata.wall_time_s);
            match config.format {
                Format::Json => r.write_json(sink(out)?)?,
                Format::Csv => r.result.write_summary_csv(sink(out)?)?,
            }
            if let Some(p) = out {
                r.result.write_qq_csv(io::BufWriter::new(File::create(qq_path(p))?))?;
            }
            s
        }
    };
    status
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rules() {
        let mut c = RunConfig::new(Command::Fit);
        c.input = Some("x.csv".into());
        c.occasions = Some(17);
        assert!(c.validate().is_ok());
        c.bootstrap = Some(49);
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        c.bootstrap = Some(50);
        c.level = 1.0;
        assert!(c.validate().is_err());
        c.level = 0.05;
        c.model = Model::Poisson;
        assert!(c.validate().is_err());
        c.occasions = None;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn exit_codes_by_class() {
        assert_eq!(CliError::from(DataError::EmptyCompleteCases).exit_code(), 3);
        assert_eq!(CliError::from(ElError::Data(DataError::EmptyCompleteCases)).exit_code(), 3);
        assert_eq!(CliError::from(InferenceError::BootstrapFailure { failed: 20, total: 50 }).exit_code(), 5);
        assert_eq!(CliError::from(InferenceError::SingularU).exit_code(), 4);
        assert_eq!(CliError::from(SimError::TooManyFailures { failed: 1, reps: 2, first: String::new() }).exit_code(), 6);
    }

    #[test]
    fn qq_sibling() {
        assert_eq!(qq_path(Path::new("/tmp/out/a.json")), PathBuf::from("/tmp/out/a.qq.csv"));
    }
}
