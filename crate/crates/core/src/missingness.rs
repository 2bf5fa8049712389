//! Step one: logistic model for the probability that `y` is observed given
//! `(x, d)`, fitted by conditional maximum likelihood over all `n` captured
//! individuals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::CaptureDataset;
use crate::models::{log_logistic, logistic};

const SCORE_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;
const SEPARATION_BOUND: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MissingnessError {
    #[error("missingness indicator has no variation")]
    Degenerate,
    #[error("complete or quasi-complete separation: the likelihood has no finite maximizer")]
    Separation,
    #[error("information matrix is singular")]
    Singular,
    #[error("Newton iterations did not converge (score sup-norm {0:.3e})")]
    NonConvergence(f64),
}

/// Non-missingness probability used inside the empirical likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Missingness {
    /// `pi(x, k; eta) = logistic((1, x', k) eta)`.
    Logistic(Vec<f64>),
    /// `pi = 1`: covariates are never missing.
    AlwaysObserved,
}

impl Missingness {
    #[inline]
    pub fn pi(&self, x: &[f64], k: u64) -> f64 {
        match self {
            Missingness::Logistic(eta) => pi(x, k, eta),
            Missingness::AlwaysObserved => 1.0,
        }
    }

    pub fn eta(&self) -> Option<&[f64]> {
        match self {
            Missingness::Logistic(eta) => Some(eta),
            Missingness::AlwaysObserved => None,
        }
    }
}

/// `pi(x, k; eta)`.
#[inline]
pub fn pi(x: &[f64], k: u64, eta: &[f64]) -> f64 {
    debug_assert_eq!(eta.len(), x.len() + 2);
    let v = eta[0] + x.iter().zip(&eta[1..]).map(|(a, b)| a * b).sum::<f64>() + eta[x.len() + 1] * k as f64;
    logistic(v)
}

fn design_row(x: &[f64], d: u32) -> DVector<f64> {
    let mut v = DVector::zeros(x.len() + 2);
    v[0] = 1.0;
    for (j, xj) in x.iter().enumerate() {
        v[j + 1] = *xj;
    }
    v[x.len() + 1] = d as f64;
    v
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissingnessFit {
    pub eta_hat: Vec<f64>,
    /// Unnormalized information `sum_i pi_i (1 - pi_i) v_i v_i'` at `eta_hat`.
    /// Divide by the abundance estimate to obtain `U`.
    pub info_sum: Vec<Vec<f64>>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl MissingnessFit {
    pub fn missingness(&self) -> Missingness {
        Missingness::Logistic(self.eta_hat.clone())
    }

    pub fn info_matrix(&self) -> DMatrix<f64> {
        let p = self.info_sum.len();
        DMatrix::from_fn(p, p, |i, j| self.info_sum[i][j])
    }

    /// `U` normalized by the plug-in population size.
    pub fn u_hat(&self, n_plug: f64) -> DMatrix<f64> {
        self.info_matrix() / n_plug
    }

    /// Standard errors of `eta_hat`.
    pub fn standard_errors(&self) -> Option<Vec<f64>> {
        let inv = self.info_matrix().try_inverse()?;
        Some((0..inv.nrows()).map(|j| inv[(j, j)].max(0.0).sqrt()).collect())
    }
}

/// `ell_pi(eta)` over all captured individuals.
pub fn loglik(dataset: &CaptureDataset, eta: &[f64]) -> f64 {
    dataset
        .observations()
        .iter()
        .map(|o| {
            let v = linear(eta, &o.x, o.d);
            if o.r {
                log_logistic(v)
            } else {
                log_logistic(-v)
            }
        })
        .sum()
}

/// Gradient of [`loglik`].
pub fn score(dataset: &CaptureDataset, eta: &[f64]) -> DVector<f64> {
    let mut g = DVector::zeros(eta.len());
    for o in dataset.observations() {
        let p = logistic(linear(eta, &o.x, o.d));
        let resid = if o.r { 1.0 - p } else { -p };
        g += design_row(&o.x, o.d) * resid;
    }
    g
}

/// `sum_i pi_i (1 - pi_i) v_i v_i'`, the negative Hessian of [`loglik`].
pub fn info_sum(dataset: &CaptureDataset, eta: &[f64]) -> DMatrix<f64> {
    let p = eta.len();
    let mut h = DMatrix::zeros(p, p);
    for o in dataset.observations() {
        let pr = logistic(linear(eta, &o.x, o.d));
        let v = design_row(&o.x, o.d);
        h.ger(pr * (1.0 - pr), &v, &v, 1.0);
    }
    h
}

/// `U = (1 / N) sum_{i <= n} pi_i (1 - pi_i) (1, x_i, d_i)^{(x)2}`.
///
/// Every observed row has `d > 0`, so summing over the sample realizes the
/// `I(D > 0)` factor and the expectation over the population of size `N` is
/// estimated by dividing by the plug-in abundance rather than by `n`.
pub fn u_matrix(dataset: &CaptureDataset, eta: &[f64], n_plug: f64) -> DMatrix<f64> {
    info_sum(dataset, eta) / n_plug
}

#[inline]
fn linear(eta: &[f64], x: &[f64], d: u32) -> f64 {
    eta[0] + x.iter().zip(&eta[1..]).map(|(a, b)| a * b).sum::<f64>() + eta[x.len() + 1] * d as f64
}

/// Damped Newton with step halving on `ell_pi`.
pub fn fit_missingness(dataset: &CaptureDataset) -> Result<MissingnessFit, MissingnessError> {
    let n = dataset.n();
    let m = dataset.m();
    if m == 0 || m == n {
        return Err(MissingnessError::Degenerate);
    }
    let p = dataset.dim_x() + 2;
    let mut eta = vec![0.0; p];
    eta[0] = (m as f64 / (n - m) as f64).ln();
    let mut ll = loglik(dataset, &eta);

    for iter in 1..=MAX_ITER {
        let g = score(dataset, &eta);
        let gmax = g.amax();
        if gmax <= SCORE_TOL {
            return finish(dataset, eta, ll, iter - 1, true);
        }
        let info = info_sum(dataset, &eta);
        let chol = info.clone().cholesky().ok_or(MissingnessError::Singular)?;
        let step = chol.solve(&g);

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = eta.iter().zip(step.iter()).map(|(e, s)| e + t * s).collect();
            let trial_ll = loglik(dataset, &trial);
            if trial_ll.is_finite() && trial_ll >= ll - 1e-12 * ll.abs() {
                eta = trial;
                ll = trial_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if eta.iter().any(|v| v.abs() > SEPARATION_BOUND) {
            return Err(MissingnessError::Separation);
        }
        if !accepted {
            let g = score(dataset, &eta);
            if g.amax() <= SCORE_TOL.sqrt() {
                return finish(dataset, eta, ll, iter, true);
            }
            return Err(MissingnessError::NonConvergence(g.amax()));
        }
        // Fitted probabilities collapsing onto {0, 1} while the score persists.
        if iter > 20 && separated(dataset, &eta) {
            return Err(MissingnessError::Separation);
        }
    }
    let g = score(dataset, &eta);
    Err(MissingnessError::NonConvergence(g.amax()))
}

fn separated(dataset: &CaptureDataset, eta: &[f64]) -> bool {
    dataset.observations().iter().all(|o| {
        let p = logistic(linear(eta, &o.x, o.d));
        !(1e-12..=1.0 - 1e-12).contains(&p) || (o.r && p > 0.5) || (!o.r && p < 0.5)
    }) && dataset
        .observations()
        .iter()
        .any(|o| {
            let p = logistic(linear(eta, &o.x, o.d));
            !(1e-12..=1.0 - 1e-12).contains(&p)
        })
}

fn finish(
    dataset: &CaptureDataset,
    eta: Vec<f64>,
    ll: f64,
    iterations: usize,
    converged: bool,
) -> Result<MissingnessFit, MissingnessError> {
    let info = info_sum(dataset, &eta);
    if info.clone().cholesky().is_none() {
        return Err(MissingnessError::Singular);
    }
    let p = info.nrows();
    Ok(MissingnessFit {
        info_sum: (0..p).map(|i| (0..p).map(|j| info[(i, j)]).collect()).collect(),
        eta_hat: eta,
        loglik: ll,
        converged,
        iterations,
    })
}
