//! Observation containers, covariate layout and validation.
//!
//! Only individuals captured at least once are ever recorded, so every row
//! carries `d >= 1`. The `y` block is either fully observed (`r = 1`) or
//! entirely missing (`r = 0`); partially observed blocks are rejected.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Capture-count distribution family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Discrete-time experiment over `occasions` capture occasions.
    Binomial { occasions: u32 },
    /// Continuous-time experiment with a constant capture intensity.
    Poisson,
}

impl Family {
    pub fn occasions(&self) -> Option<u32> {
        match *self {
            Family::Binomial { occasions } => Some(occasions),
            Family::Poisson => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureModelSpec {
    pub family: Family,
    pub one_inflated: bool,
    pub dim_x: usize,
    pub dim_y: usize,
}

impl CaptureModelSpec {
    pub fn binomial(occasions: u32, dim_x: usize, dim_y: usize) -> Self {
        CaptureModelSpec {
            family: Family::Binomial { occasions },
            one_inflated: false,
            dim_x,
            dim_y,
        }
    }

    pub fn poisson(dim_x: usize, dim_y: usize) -> Self {
        CaptureModelSpec {
            family: Family::Poisson,
            one_inflated: false,
            dim_x,
            dim_y,
        }
    }

    pub fn with_one_inflation(mut self, one_inflated: bool) -> Self {
        self.one_inflated = one_inflated;
        self
    }

    /// Length of `z = (1, x, y)`.
    pub fn dim_z(&self) -> usize {
        1 + self.dim_x + self.dim_y
    }

    /// Length of the missingness parameter acting on `(1, x, d)`.
    pub fn dim_eta(&self) -> usize {
        2 + self.dim_x
    }

    pub fn check(&self) -> Result<(), DataError> {
        if let Family::Binomial { occasions: 0 } = self.family {
            return Err(DataError::InvalidSpec("binomial family needs K >= 1".into()));
        }
        if self.dim_y == 0 {
            return Err(DataError::InvalidSpec("at least one y covariate is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Number of captures.
    pub d: u32,
    /// Fully observed covariates.
    pub x: Vec<f64>,
    /// Possibly missing covariates; `None` marks a missing cell.
    pub y: Vec<Option<f64>>,
    /// Non-missingness indicator.
    pub r: bool,
}

impl Observation {
    pub fn complete(d: u32, x: Vec<f64>, y: Vec<f64>) -> Self {
        Observation {
            d,
            x,
            y: y.into_iter().map(Some).collect(),
            r: true,
        }
    }

    pub fn incomplete(d: u32, x: Vec<f64>, dim_y: usize) -> Self {
        Observation {
            d,
            x,
            y: vec![None; dim_y],
            r: false,
        }
    }

    /// Observed `y` values; `None` unless the whole block is present.
    pub fn y_values(&self) -> Option<Vec<f64>> {
        if !self.r {
            return None;
        }
        self.y.iter().copied().collect()
    }
}

/// The stacked covariate `z = (1, x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateVector(Vec<f64>);

impl CovariateVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for CovariateVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn stack_z(obs: &Observation) -> Result<CovariateVector, DataError> {
    let y = obs.y_values().ok_or(DataError::MissingY)?;
    let mut z = Vec::with_capacity(1 + obs.x.len() + y.len());
    z.push(1.0);
    z.extend_from_slice(&obs.x);
    z.extend_from_slice(&y);
    Ok(CovariateVector(z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RowProblem {
    NotCaptured,
    ExceedsOccasions { occasions: u32 },
    PartialY,
    IndicatorMismatch,
    NonFinite,
}

impl std::fmt::Display for RowProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RowProblem::NotCaptured => write!(f, "d = 0"),
            RowProblem::ExceedsOccasions { occasions } => write!(f, "d exceeds K = {occasions}"),
            RowProblem::PartialY => write!(f, "y block partially missing"),
            RowProblem::IndicatorMismatch => write!(f, "r disagrees with y presence"),
            RowProblem::NonFinite => write!(f, "non-finite covariate"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowViolation {
    /// Row index in the caller's original ordering.
    pub row: usize,
    pub problem: RowProblem,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{} invalid row(s); first: row {} ({})", .0.len(), .0[0].row, .0[0].problem)]
    InvalidRows(Vec<RowViolation>),
    #[error("no complete cases (m = 0)")]
    EmptyCompleteCases,
    #[error("row {row}: expected {expected_x} x and {expected_y} y values, found {found_x} and {found_y}")]
    InconsistentDimensions {
        row: usize,
        expected_x: usize,
        expected_y: usize,
        found_x: usize,
        found_y: usize,
    },
    #[error("covariate y is missing for this observation")]
    MissingY,
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureDataset {
    observations: Vec<Observation>,
    /// Original row index of each stored observation.
    row_ids: Vec<usize>,
    m: usize,
    pub x_names: Vec<String>,
    pub y_names: Vec<String>,
}

impl CaptureDataset {
    pub fn new(observations: Vec<Observation>, x_names: Vec<String>, y_names: Vec<String>) -> Self {
        let n = observations.len();
        let m = observations.iter().filter(|o| o.r).count();
        CaptureDataset {
            observations,
            row_ids: (0..n).collect(),
            m,
            x_names,
            y_names,
        }
    }

    /// Dataset with generic covariate names `x1.., y1..`.
    pub fn unnamed(observations: Vec<Observation>, dim_x: usize, dim_y: usize) -> Self {
        let xs = (1..=dim_x).map(|j| format!("x{j}")).collect();
        let ys = (1..=dim_y).map(|j| format!("y{j}")).collect();
        Self::new(observations, xs, ys)
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    /// Complete cases; after validation these are the first `m` rows.
    pub fn complete_cases(&self) -> &[Observation] {
        &self.observations[..self.m]
    }

    pub fn dim_x(&self) -> usize {
        self.x_names.len()
    }

    pub fn dim_y(&self) -> usize {
        self.y_names.len()
    }

    /// Checks every row against `spec` and returns a copy with the complete
    /// cases moved (stably) to the front.
    pub fn validate(&self, spec: &CaptureModelSpec) -> Result<CaptureDataset, DataError> {
        spec.check()?;
        let mut violations = Vec::new();
        for (obs, &row) in self.observations.iter().zip(&self.row_ids) {
            if obs.x.len() != spec.dim_x || obs.y.len() != spec.dim_y {
                return Err(DataError::InconsistentDimensions {
                    row,
                    expected_x: spec.dim_x,
                    expected_y: spec.dim_y,
                    found_x: obs.x.len(),
                    found_y: obs.y.len(),
                });
            }
            if obs.d == 0 {
                violations.push(RowViolation { row, problem: RowProblem::NotCaptured });
            }
            if let Family::Binomial { occasions } = spec.family {
                if obs.d > occasions {
                    violations.push(RowViolation {
                        row,
                        problem: RowProblem::ExceedsOccasions { occasions },
                    });
                }
            }
            let present = obs.y.iter().filter(|v| v.is_some()).count();
            if present != 0 && present != obs.y.len() {
                violations.push(RowViolation { row, problem: RowProblem::PartialY });
            } else if (present == obs.y.len()) != obs.r {
                violations.push(RowViolation { row, problem: RowProblem::IndicatorMismatch });
            }
            let finite = obs.x.iter().all(|v| v.is_finite())
                && obs.y.iter().flatten().all(|v| v.is_finite());
            if !finite {
                violations.push(RowViolation { row, problem: RowProblem::NonFinite });
            }
        }
        if !violations.is_empty() {
            return Err(DataError::InvalidRows(violations));
        }

        let (complete, missing): (Vec<_>, Vec<_>) = self
            .observations
            .iter()
            .cloned()
            .zip(self.row_ids.iter().copied())
            .partition(|(o, _)| o.r);
        let m = complete.len();
        if m == 0 {
            return Err(DataError::EmptyCompleteCases);
        }
        let (observations, row_ids) = complete.into_iter().chain(missing).unzip();
        Ok(CaptureDataset {
            observations,
            row_ids,
            m,
            x_names: self.x_names.clone(),
            y_names: self.y_names.clone(),
        })
    }
}
