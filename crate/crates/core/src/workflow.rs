//! Two-step estimation pipeline shared by the simulation harness and the CLI.

use thiserror::Error;

use crate::data::{CaptureDataset, CaptureModelSpec, DataError};
use crate::el::{fit_mele, ElError, ElFit, ElProblem, FitOptions};
use crate::inference::{variance, InferenceError, VarianceEstimate};
use crate::missingness::{fit_missingness, Missingness, MissingnessError, MissingnessFit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("step one: {0}")]
    Missingness(#[from] MissingnessError),
    #[error(transparent)]
    El(#[from] ElError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// Result of both estimation steps on one dataset.
#[derive(Debug, Clone)]
pub struct TwoStepFit {
    pub dataset: CaptureDataset,
    /// `None` when no covariate is missing; `pi = 1` is then used.
    pub missingness_fit: Option<MissingnessFit>,
    pub problem: ElProblem,
    pub fit: ElFit,
}

impl TwoStepFit {
    pub fn variance(&self) -> Result<VarianceEstimate, InferenceError> {
        variance(&self.problem, &self.fit, self.missingness_fit.as_ref())
    }
}

/// Validates the dataset against the model and fits the missingness model.
pub fn step_one(
    dataset: &CaptureDataset,
    spec: &CaptureModelSpec,
) -> Result<(CaptureDataset, Option<MissingnessFit>), Error> {
    spec.check()?;
    let ds = dataset.validate(spec)?;
    let mfit = if ds.m() == ds.n() { None } else { Some(fit_missingness(&ds)?) };
    Ok((ds, mfit))
}

/// Step two given the output of [`step_one`].
pub fn step_two(
    dataset: CaptureDataset,
    missingness_fit: Option<MissingnessFit>,
    spec: &CaptureModelSpec,
    opts: &FitOptions,
) -> Result<TwoStepFit, Error> {
    let missingness = missingness_fit.as_ref().map_or(Missingness::AlwaysObserved, |m| m.missingness());
    let problem = ElProblem::new(&dataset, spec, &missingness)?;
    let fit = fit_mele(&problem, opts)?;
    Ok(TwoStepFit { dataset, missingness_fit, problem, fit })
}

/// Both steps.
pub fn two_step(dataset: &CaptureDataset, spec: &CaptureModelSpec, opts: &FitOptions) -> Result<TwoStepFit, Error> {
    let (ds, mfit) = step_one(dataset, spec)?;
    step_two(ds, mfit, spec, opts)
}
