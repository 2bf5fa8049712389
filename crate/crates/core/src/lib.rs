//! Abundance estimation for closed-population capture–recapture data where
//! some individual covariates are missing at random.
//!
//! Estimation runs in two steps. A logistic model for the probability that a
//! covariate is observed is fitted on all captured individuals
//! ([`missingness`]). A semiparametric empirical likelihood over the complete
//! cases then estimates the abundance `N`, the capture-model coefficients and,
//! optionally, a one-inflation parameter ([`el`]). [`inference`] provides
//! variance estimates, scaled EL ratio confidence intervals and a score test
//! for one-inflation; [`sim`] runs Monte Carlo studies.

pub mod data;
pub mod el;
pub mod inference;
pub mod missingness;
pub mod models;
pub mod optim;
pub mod par;
pub mod roots;
pub mod sim;
pub mod workflow;

pub use data::{CaptureDataset, CaptureModelSpec, CovariateVector, DataError, Family, Observation};
pub use el::{el_ratio, el_weights, fit_mele, profile_loglik, solve_xi, ElError, ElFit, ElParams, ElProblem, FitOptions};
pub use inference::{
    one_inflation_test, scaled_ci, score_u_s, ConfidenceInterval, InferenceError, ScoreTestResult, VarianceEstimate,
};
pub use missingness::{fit_missingness, Missingness, MissingnessError, MissingnessFit};
pub use par::Exec;
pub use sim::{generate, run_study, ScenarioId, SimulationReport, SimulationScenario, StudyOptions};
pub use workflow::{two_step, TwoStepFit};

/// Library version recorded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
