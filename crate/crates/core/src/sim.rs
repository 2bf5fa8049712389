//! Simulation scenarios A–D and the Monte Carlo driver.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::data::{CaptureDataset, CaptureModelSpec, Family, Observation};
use crate::el::{FitOptions, NProfile};
use crate::inference::{one_inflation_test, scaled_ci, score_u_s, ConfidenceInterval, ScoreTestResult};
use crate::missingness::pi;
use crate::par::Exec;
use crate::workflow::{step_one, step_two, TwoStepFit};

/// Independent reproducible generator for `(seed, index, stream)`.
pub fn rng_for(seed: u64, index: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer, used to derive per-replicate seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_COVARIATES: u64 = 1;
const STREAM_COUNTS: u64 = 2;
const STREAM_INFLATION: u64 = 3;
const STREAM_MISSINGNESS: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioId {
    A,
    B,
    C,
    D,
}

impl std::str::FromStr for ScenarioId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(ScenarioId::A),
            "B" => Ok(ScenarioId::B),
            "C" => Ok(ScenarioId::C),
            "D" => Ok(ScenarioId::D),
            _ => Err(format!("unknown scenario {s:?}; expected A, B, C or D")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CovariateLaw {
    Bernoulli { p: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl CovariateLaw {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            CovariateLaw::Bernoulli { p } => f64::from(u8::from(rng.random::<f64>() < p)),
            CovariateLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationScenario {
    pub id: ScenarioId,
    pub n0: usize,
    pub family: Family,
    pub beta0: Vec<f64>,
    /// Truth for `pi(x, k) = logistic(eta0' (1, x1, x2, k))`.
    pub eta0: Vec<f64>,
    pub omega0: f64,
    pub x1: CovariateLaw,
    pub x2: CovariateLaw,
    pub y: CovariateLaw,
    pub reps: usize,
    pub seed: u64,
    /// Departures from the scenario definition.
    pub overrides: Vec<String>,
}

impl SimulationScenario {
    pub fn new(id: ScenarioId) -> Self {
        let binomial = Family::Binomial { occasions: 17 };
        let (family, beta0, x2) = match id {
            ScenarioId::A | ScenarioId::D => {
                (binomial, vec![-1.5, -0.3, -1.2, 0.5], CovariateLaw::Bernoulli { p: 0.7 })
            }
            ScenarioId::B => (binomial, vec![-1.5, -0.3, -1.2, 0.5], CovariateLaw::Uniform { lo: 0.0, hi: 2.0 }),
            ScenarioId::C => (Family::Poisson, vec![0.5, -0.3, -1.2, 0.5], CovariateLaw::Bernoulli { p: 0.7 }),
        };
        SimulationScenario {
            id,
            n0: 200,
            family,
            beta0,
            eta0: vec![-0.3, 0.5, 0.5, 0.5],
            omega0: if id == ScenarioId::D { 0.7 } else { 1.0 },
            x1: CovariateLaw::Bernoulli { p: 0.5 },
            x2,
            y: CovariateLaw::Uniform { lo: 0.0, hi: 1.0 },
            reps: 500,
            seed: 20_240_601,
            overrides: Vec::new(),
        }
    }

    pub fn with_n0(mut self, n0: usize) -> Self {
        self.n0 = n0;
        self
    }

    pub fn with_reps(mut self, reps: usize) -> Self {
        self.reps = reps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// One-inflation parameter; only Scenario D is defined with `omega0 < 1`.
    pub fn with_omega0(mut self, omega0: f64) -> Self {
        if self.id != ScenarioId::D && omega0 != 1.0 {
            self.overrides.push(format!("omega0={omega0}"));
        }
        self.omega0 = omega0;
        self
    }

    pub fn with_beta0(mut self, beta0: Vec<f64>) -> Self {
        self.overrides.push(format!("beta0={beta0:?}"));
        self.beta0 = beta0;
        self
    }

    pub fn with_eta0(mut self, eta0: Vec<f64>) -> Self {
        self.overrides.push(format!("eta0={eta0:?}"));
        self.eta0 = eta0;
        self
    }

    /// Capture model fitted to this scenario's data.
    pub fn spec(&self, one_inflated: bool) -> CaptureModelSpec {
        CaptureModelSpec { family: self.family, one_inflated, dim_x: 2, dim_y: 1 }
    }
}

/// One member of a simulated population, before capture truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub x: Vec<f64>,
    pub y: f64,
    /// Capture count; zero for individuals never caught.
    pub d: u32,
    /// Whether `y` would be observed.
    pub r: bool,
}

/// Draws the full population of replicate `index`, including `d = 0`.
pub fn population(scenario: &SimulationScenario, index: u64) -> Vec<Individual> {
    let mut cov = rng_for(scenario.seed, index, STREAM_COVARIATES);
    let mut cnt = rng_for(scenario.seed, index, STREAM_COUNTS);
    let mut inf = rng_for(scenario.seed, index, STREAM_INFLATION);
    let mut mis = rng_for(scenario.seed, index, STREAM_MISSINGNESS);
    (0..scenario.n0)
        .map(|_| {
            let x = vec![scenario.x1.draw(&mut cov), scenario.x2.draw(&mut cov)];
            let y = scenario.y.draw(&mut cov);
            let t = scenario.beta0[0] + scenario.beta0[1] * x[0] + scenario.beta0[2] * x[1] + scenario.beta0[3] * y;
            let mut d = crate::inference::draw_count(t, scenario.family, &mut cnt);
            let u: f64 = inf.random();
            if d >= 1 && u < 1.0 - scenario.omega0 {
                d = 1;
            }
            let v: f64 = mis.random();
            let r = v < pi(&x, d as u64, &scenario.eta0);
            Individual { x, y, d, r }
        })
        .collect()
}

/// Draws replicate `index` of the scenario: the captured part of [`population`].
pub fn generate(scenario: &SimulationScenario, index: u64) -> CaptureDataset {
    let obs = population(scenario, index)
        .into_iter()
        .filter(|ind| ind.d >= 1)
        .map(|ind| if ind.r { Observation::complete(ind.d, ind.x, vec![ind.y]) } else { Observation::incomplete(ind.d, ind.x, 1) })
        .collect();
    CaptureDataset::new(obs, vec!["x1".into(), "x2".into()], vec!["y".into()])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyOptions {
    /// Fit the model without one-inflation.
    pub plain: bool,
    /// Fit the one-inflated model.
    pub inflated: bool,
    /// Two-sided levels of the scaled EL ratio intervals.
    pub ci_levels: Vec<f64>,
    /// Record `R(N0) / scale` for calibration plots.
    pub ratio_at_truth: bool,
    /// Compute `U_s` at the plain fit.
    pub score: bool,
    /// Run the bootstrap score test with this many replicates.
    pub score_test_bootstrap: Option<usize>,
    pub fit: FitOptions,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            plain: true,
            inflated: false,
            ci_levels: vec![0.90, 0.95, 0.98, 0.99],
            ratio_at_truth: false,
            score: false,
            score_test_bootstrap: None,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorOutcome {
    pub n_hat: f64,
    pub beta_hat: Vec<f64>,
    pub omega_hat: Option<f64>,
    pub se_n: f64,
    pub scale: f64,
    pub intervals: Vec<ConfidenceInterval>,
    pub scaled_ratio_at_truth: Option<f64>,
    pub boundary_omega: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub n_captured: usize,
    pub m: usize,
    pub plain: Option<EstimatorOutcome>,
    pub inflated: Option<EstimatorOutcome>,
    pub u_s: Option<f64>,
    pub score_test: Option<ScoreTestResult>,
}

fn estimator(
    two: &TwoStepFit,
    scenario: &SimulationScenario,
    opts: &StudyOptions,
) -> Result<EstimatorOutcome, String> {
    let fit = &two.fit;
    if !fit.converged {
        return Err(format!("fit did not converge ({})", fit.trace.termination));
    }
    let var = two.variance().map_err(|e| e.to_string())?;
    let intervals = if opts.ci_levels.is_empty() {
        Vec::new()
    } else {
        scaled_ci(&two.problem, fit, &var, &opts.ci_levels, &opts.fit).map_err(|e| e.to_string())?
    };
    let scaled_ratio_at_truth = if opts.ratio_at_truth {
        let r = NProfile::new(&two.problem, fit, &opts.fit)
            .ratio(scenario.n0 as f64)
            .map_err(|e| e.to_string())?;
        Some(r / var.scale)
    } else {
        None
    };
    Ok(EstimatorOutcome {
        n_hat: fit.params.n,
        beta_hat: fit.params.beta.clone(),
        omega_hat: fit.params.omega,
        se_n: var.se_n,
        scale: var.scale,
        intervals,
        scaled_ratio_at_truth,
        boundary_omega: fit.trace.boundary_omega,
    })
}

/// Generates and analyses one replicate.
pub fn run_replicate(scenario: &SimulationScenario, index: usize, opts: &StudyOptions) -> Result<ReplicateOutcome, String> {
    let ds = generate(scenario, index as u64);
    let (n_captured, m) = (ds.n(), ds.m());
    let (ds, mfit) = step_one(&ds, &scenario.spec(false)).map_err(|e| e.to_string())?;
    let mut out = ReplicateOutcome { index, n_captured, m, plain: None, inflated: None, u_s: None, score_test: None };
    if opts.plain || opts.score || opts.score_test_bootstrap.is_some() {
        let two = step_two(ds.clone(), mfit.clone(), &scenario.spec(false), &opts.fit).map_err(|e| e.to_string())?;
        if opts.plain {
            out.plain = Some(estimator(&two, scenario, opts)?);
        }
        if opts.score {
            out.u_s = Some(score_u_s(&two.problem, &two.fit.params.beta).map_err(|e| e.to_string())?);
        }
        if let Some(b) = opts.score_test_bootstrap {
            if !two.fit.converged {
                return Err("null fit did not converge".into());
            }
            let seed = mix_seed(scenario.seed, index as u64);
            let test = one_inflation_test(&two.problem, &two.fit, b, seed, Exec::Sequential, &opts.fit)
                .map_err(|e| e.to_string())?;
            out.u_s = Some(test.u_s);
            out.score_test = Some(test);
        }
    }
    if opts.inflated {
        let two = step_two(ds, mfit, &scenario.spec(true), &opts.fit).map_err(|e| e.to_string())?;
        out.inflated = Some(estimator(&two, scenario, opts)?);
    }
    Ok(out)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("{failed} of {reps} replicates failed (first: {first})")]
    TooManyFailures { failed: usize, reps: usize, first: String },
    #[error("invalid study configuration: {0}")]
    Config(String),
}

/// Failure fraction above which a study is rejected.
pub const MAX_FAILURE_FRACTION: f64 = 0.10;
/// Failure fraction above which a warning is logged.
pub const WARN_FAILURE_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub level: f64,
    pub two_sided: f64,
    /// Fraction of replicates with `N0 >= lower` of the `2 level - 1` interval.
    pub lower: Option<f64>,
    /// Fraction of replicates with `N0 <= upper` of the `2 level - 1` interval.
    pub upper: Option<f64>,
    pub mean_length: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub label: String,
    pub n_bias: f64,
    pub n_rmse: f64,
    pub n_sd: f64,
    pub mean_se_n: f64,
    pub beta_bias: Vec<f64>,
    pub beta_rmse: Vec<f64>,
    pub omega_bias: Option<f64>,
    pub omega_boundary_fraction: Option<f64>,
    pub coverage: Vec<CoverageSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectionSummary {
    pub levels: Vec<f64>,
    pub rates: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub mean_u_s: f64,
    pub se_mean_u_s: f64,
    pub rejection: Option<RejectionSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub label: String,
    /// `(empirical quantile of R(N0)/scale, chi-square(1) quantile)`.
    pub qq: Vec<(f64, f64)>,
    pub ks_distance: f64,
    /// Asymptotic 1% critical value of the Kolmogorov–Smirnov statistic.
    pub ks_critical_1pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyMetadata {
    pub seed: u64,
    pub reps: usize,
    /// Not serialized, so that reports of identical runs are identical.
    #[serde(skip)]
    pub wall_time_s: f64,
    pub version: String,
    pub overrides: Vec<String>,
    pub exec: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationReport {
    pub scenario: SimulationScenario,
    pub options: StudyOptions,
    pub estimators: Vec<EstimatorSummary>,
    pub score: Option<ScoreSummary>,
    pub calibration: Vec<CalibrationSummary>,
    pub failures: usize,
    pub failure_messages: Vec<String>,
    pub mean_captured: f64,
    pub mean_complete: f64,
    pub metadata: StudyMetadata,
    #[serde(skip)]
    pub replicates: Vec<ReplicateOutcome>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn summarize(label: &str, outs: &[&EstimatorOutcome], scenario: &SimulationScenario, levels: &[f64]) -> EstimatorSummary {
    let n0 = scenario.n0 as f64;
    let n_err: Vec<f64> = outs.iter().map(|o| o.n_hat - n0).collect();
    let n_bias = mean(&n_err);
    let n_rmse = mean(&n_err.iter().map(|e| e * e).collect::<Vec<_>>()).sqrt();
    let n_sd = (n_err.iter().map(|e| (e - n_bias).powi(2)).sum::<f64>() / (n_err.len().max(2) - 1) as f64).sqrt();
    let p = scenario.beta0.len();
    let beta_err = |j: usize| -> Vec<f64> { outs.iter().map(|o| o.beta_hat[j] - scenario.beta0[j]).collect() };
    let coverage = levels
        .iter()
        .enumerate()
        .map(|(li, &level)| {
            let two_sided = mean(&outs.iter().map(|o| f64::from(u8::from(o.intervals[li].contains(n0)))).collect::<Vec<_>>());
            let one = levels.iter().position(|&l| (l - (2.0 * level - 1.0)).abs() < 1e-9);
            let lower = one.map(|k| mean(&outs.iter().map(|o| f64::from(u8::from(n0 >= o.intervals[k].lower))).collect::<Vec<_>>()));
            let upper = one.map(|k| mean(&outs.iter().map(|o| f64::from(u8::from(n0 <= o.intervals[k].upper))).collect::<Vec<_>>()));
            let mean_length = mean(&outs.iter().map(|o| o.intervals[li].upper - o.intervals[li].lower).collect::<Vec<_>>());
            CoverageSummary { level, two_sided, lower, upper, mean_length }
        })
        .collect();
    let omegas: Vec<f64> = outs.iter().filter_map(|o| o.omega_hat).collect();
    EstimatorSummary {
        label: label.into(),
        n_bias,
        n_rmse,
        n_sd,
        mean_se_n: mean(&outs.iter().map(|o| o.se_n).collect::<Vec<_>>()),
        beta_bias: (0..p).map(|j| mean(&beta_err(j))).collect(),
        beta_rmse: (0..p).map(|j| mean(&beta_err(j).iter().map(|e| e * e).collect::<Vec<_>>()).sqrt()).collect(),
        omega_bias: (!omegas.is_empty()).then(|| mean(&omegas) - scenario.omega0),
        omega_boundary_fraction: (!omegas.is_empty())
            .then(|| mean(&outs.iter().map(|o| f64::from(u8::from(o.boundary_omega))).collect::<Vec<_>>())),
        coverage,
    }
}

/// QQ pairs against chi-square(1) and the Kolmogorov–Smirnov distance.
pub fn chi2_calibration(label: &str, draws: &[f64]) -> CalibrationSummary {
    let chi = ChiSquared::new(1.0).expect("valid dof");
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let qq = sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, chi.inverse_cdf((i as f64 + 0.5) / n)))
        .collect();
    let ks_distance = sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = chi.cdf(v);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max);
    CalibrationSummary { label: label.into(), qq, ks_distance, ks_critical_1pct: 1.6276 / n.sqrt() }
}

/// Runs `scenario.reps` replicates and aggregates them.
pub fn run_study(scenario: &SimulationScenario, opts: &StudyOptions, exec: Exec) -> Result<SimulationReport, SimError> {
    if scenario.reps == 0 {
        return Err(SimError::Config("reps must be at least 1".into()));
    }
    let start = Instant::now();
    let results = exec.map_indexed(scenario.reps, |i| run_replicate(scenario, i, opts));
    let mut replicates = Vec::new();
    let mut failure_messages = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => replicates.push(o),
            Err(e) => failure_messages.push(format!("replicate {i}: {e}")),
        }
    }
    let failures = failure_messages.len();
    let reps = scenario.reps;
    if failures as f64 > MAX_FAILURE_FRACTION * reps as f64 || replicates.is_empty() {
        return Err(SimError::TooManyFailures { failed: failures, reps, first: failure_messages.first().cloned().unwrap_or_default() });
    }
    if failures as f64 > WARN_FAILURE_FRACTION * reps as f64 {
        log::warn!("{failures} of {reps} replicates failed and were excluded");
    }

    let mut estimators = Vec::new();
    let mut calibration = Vec::new();
    for (label, pick) in [
        ("two-step", (|r: &ReplicateOutcome| r.plain.as_ref()) as fn(&ReplicateOutcome) -> Option<&EstimatorOutcome>),
        ("two-step-one-inflated", |r: &ReplicateOutcome| r.inflated.as_ref()),
    ] {
        let outs: Vec<&EstimatorOutcome> = replicates.iter().filter_map(pick).collect();
        if outs.is_empty() {
            continue;
        }
        estimators.push(summarize(label, &outs, scenario, &opts.ci_levels));
        let draws: Vec<f64> = outs.iter().filter_map(|o| o.scaled_ratio_at_truth).collect();
        if !draws.is_empty() {
            calibration.push(chi2_calibration(label, &draws));
        }
    }

    let us: Vec<f64> = replicates.iter().filter_map(|r| r.u_s).collect();
    let score = (!us.is_empty()).then(|| {
        let mu = mean(&us);
        let sd = (us.iter().map(|u| (u - mu).powi(2)).sum::<f64>() / (us.len().max(2) - 1) as f64).sqrt();
        let tests: Vec<&ScoreTestResult> = replicates.iter().filter_map(|r| r.score_test.as_ref()).collect();
        let rejection = (!tests.is_empty()).then(|| {
            let levels = vec![0.10, 0.05, 0.01];
            let rates = levels
                .iter()
                .map(|&a| tests.iter().filter(|t| t.rejects(a)).count() as f64 / tests.len() as f64)
                .collect();
            RejectionSummary { levels, rates, count: tests.len() }
        });
        ScoreSummary { mean_u_s: mu, se_mean_u_s: sd / (us.len() as f64).sqrt(), rejection }
    });

    Ok(SimulationReport {
        scenario: scenario.clone(),
        options: opts.clone(),
        estimators,
        score,
        calibration,
        failures,
        failure_messages: failure_messages.into_iter().take(20).collect(),
        mean_captured: mean(&replicates.iter().map(|r| r.n_captured as f64).collect::<Vec<_>>()),
        mean_complete: mean(&replicates.iter().map(|r| r.m as f64).collect::<Vec<_>>()),
        metadata: StudyMetadata {
            seed: scenario.seed,
            reps,
            wall_time_s: start.elapsed().as_secs_f64(),
            version: crate::VERSION.into(),
            overrides: scenario.overrides.clone(),
            exec: format!("{exec:?}"),
        },
        replicates,
    })
}

impl SimulationReport {
    /// Flat `(estimator, metric, value)` rows.
    pub fn summary_rows(&self) -> Vec<(String, String, f64)> {
        let mut rows = Vec::new();
        for e in &self.estimators {
            let mut push = |k: String, v: f64| rows.push((e.label.clone(), k, v));
            push("n_bias".into(), e.n_bias);
            push("n_rmse".into(), e.n_rmse);
            push("n_sd".into(), e.n_sd);
            push("mean_se_n".into(), e.mean_se_n);
            for (j, (b, r)) in e.beta_bias.iter().zip(&e.beta_rmse).enumerate() {
                push(format!("beta{}_bias", j + 1), *b);
                push(format!("beta{}_rmse", j + 1), *r);
            }
            if let Some(w) = e.omega_bias {
                push("omega_bias".into(), w);
            }
            for c in &e.coverage {
                let pct = (c.level * 100.0).round();
                push(format!("coverage{pct}_two_sided"), c.two_sided);
                if let Some(v) = c.lower {
                    push(format!("coverage{pct}_lower"), v);
                }
                if let Some(v) = c.upper {
                    push(format!("coverage{pct}_upper"), v);
                }
            }
        }
        if let Some(s) = &self.score {
            rows.push(("score".into(), "mean_u_s".into(), s.mean_u_s));
            if let Some(r) = &s.rejection {
                for (l, v) in r.levels.iter().zip(&r.rates) {
                    rows.push(("score".into(), format!("rejection{}", (l * 100.0).round()), *v));
                }
            }
        }
        for c in &self.calibration {
            rows.push((c.label.clone(), "ks_distance".into(), c.ks_distance));
        }
        rows.push(("study".into(), "failures".into(), self.failures as f64));
        rows
    }

    pub fn write_json<W: Write>(&self, w: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(w, self)
    }

    pub fn write_summary_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["estimator", "metric", "value"])?;
        for (e, k, v) in self.summary_rows() {
            out.write_record([e, k, v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_qq_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["estimator", "empirical", "chisq1"])?;
        for c in &self.calibration {
            for (e, t) in &c.qq {
                out.write_record([c.label.clone(), e.to_string(), t.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// `P(D > 0)` averaged over the covariate law by Monte Carlo.
pub fn capture_probability(scenario: &SimulationScenario, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = scenario.spec(false);
    let mut total = 0.0;
    for _ in 0..draws {
        let z = [1.0, scenario.x1.draw(&mut rng), scenario.x2.draw(&mut rng), scenario.y.draw(&mut rng)];
        total += 1.0 - crate::models::f(0, &z, &scenario.beta0, &spec);
    }
    total / draws as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::logistic;

    #[test]
    fn deterministic_generation() {
        let s = SimulationScenario::new(ScenarioId::A);
        assert_eq!(generate(&s, 3), generate(&s, 3));
        assert_ne!(generate(&s, 3), generate(&s, 4));
    }

    #[test]
    fn scenario_d_without_inflation_is_scenario_a() {
        let a = SimulationScenario::new(ScenarioId::A);
        let d = SimulationScenario::new(ScenarioId::D).with_omega0(1.0);
        for i in 0..5 {
            assert_eq!(generate(&a, i), generate(&d, i));
        }
    }

    #[test]
    fn generated_rows_are_valid() {
        for id in [ScenarioId::A, ScenarioId::B, ScenarioId::C, ScenarioId::D] {
            let s = SimulationScenario::new(id);
            let ds = generate(&s, 0);
            assert!(ds.n() > 0 && ds.m() > 0 && ds.m() < ds.n());
            ds.validate(&s.spec(id == ScenarioId::D)).unwrap();
        }
    }

    #[test]
    fn mix_seed_spreads() {
        assert_ne!(mix_seed(1, 0), mix_seed(1, 1));
        assert_ne!(mix_seed(1, 0), mix_seed(2, 0));
    }

    #[test]
    fn calibration_of_exact_quantiles_is_tight() {
        let chi = ChiSquared::new(1.0).unwrap();
        let draws: Vec<f64> = (0..500).map(|i| chi.inverse_cdf((i as f64 + 0.5) / 500.0)).collect();
        let c = chi2_calibration("x", &draws);
        assert!(c.ks_distance <= 0.0011);
        assert!(c.qq.iter().all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn logistic_used_for_truth() {
        let s = SimulationScenario::new(ScenarioId::A);
        let v = pi(&[1.0, 0.0], 2, &s.eta0);
        assert!((v - logistic(-0.3 + 0.5 + 1.0)).abs() < 1e-15);
    }
}
