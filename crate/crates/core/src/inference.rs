//! Variance estimation, scaled EL ratio confidence intervals and the
//! score-like test for one-inflation.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

use crate::data::{CaptureDataset, CaptureModelSpec, Family, Observation};
use crate::el::{fit_mele_from, ElError, ElFit, ElParams, ElProblem, FitOptions, NProfile};
use crate::missingness::{fit_missingness, Missingness, MissingnessFit};
use crate::models::{ln_pmf, logistic};
use crate::par::Exec;
use crate::roots::{brent_with_values, RootError, RootOptions};
use crate::sim::rng_for;

/// Relative agreement required before the numerical `(1,1)` entry of `S11`
/// is replaced by its analytic value.
const V11_AGREEMENT: f64 = 0.05;
const EIGEN_CEILING: f64 = -1e-10;
/// Positive eigenvalues of `S11` above this fraction of the spectral radius
/// mean the point is not a maximum.
const NOT_MAXIMUM_RATIO: f64 = 1e-3;
/// Largest tolerated fraction of failed bootstrap replicates.
pub const MAX_BOOTSTRAP_FAILURE: f64 = 0.2;
pub const MIN_BOOTSTRAP: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("the nuisance block of S11 is singular")]
    SingularBlock,
    #[error("S11 is not negative definite (largest eigenvalue {0:.3e}); the fit is not a maximum")]
    NonNegativeDefinite(f64),
    #[error("U is singular")]
    SingularU,
    #[error("non-positive variance or scale: sigma2 = {sigma2}, scale = {scale}")]
    NonPositiveScale { sigma2: f64, scale: f64 },
    #[error("f(1, z) = 0 for complete case {0}")]
    ZeroDenominator(usize),
    #[error("{failed} of {total} bootstrap replicates failed")]
    BootstrapFailure { failed: usize, total: usize },
    #[error("at least {MIN_BOOTSTRAP} bootstrap replicates are required, got {0}")]
    TooFewBootstrap(usize),
    #[error("confidence interval search failed: {0}")]
    Interval(String),
    #[error(transparent)]
    El(#[from] ElError),
}

/// Estimated blocks of `S` at the MELE, with `theta = (nu, beta, alpha, [omega])`
/// and `nu = N / N_hat`.
#[derive(Debug, Clone)]
pub struct SBlocks {
    pub s11: DMatrix<f64>,
    /// `None` when covariates are never missing.
    pub s12: Option<DMatrix<f64>>,
    pub v11: f64,
    pub v11_numeric: f64,
    pub n_hat: f64,
    pub dim_beta: usize,
    pub inflated: bool,
    pub clipped: bool,
    pub diagnostics: Vec<String>,
}

fn theta_of(p: &ElParams) -> Vec<f64> {
    let mut t = vec![p.n];
    t.extend_from_slice(&p.beta);
    t.push(p.alpha);
    if let Some(w) = p.omega {
        t.push(w);
    }
    t
}

fn params_of(theta: &[f64], dim_beta: usize, inflated: bool) -> ElParams {
    ElParams {
        n: theta[0],
        beta: theta[1..1 + dim_beta].to_vec(),
        alpha: theta[1 + dim_beta],
        omega: inflated.then(|| theta[2 + dim_beta]),
    }
}

fn fd_step(v: f64) -> f64 {
    v.abs().max(1.0) * f64::EPSILON.cbrt()
}

/// Jacobian of `g` at `x` by central differences with steps
/// `max(1, |x_j|) eps^{1/3}`; falls back to a one-sided difference in a
/// coordinate where one side is infeasible.
pub fn fd_jacobian<F>(mut g: F, x: &[f64]) -> Result<DMatrix<f64>, ElError>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, ElError>,
{
    let mut cols = Vec::with_capacity(x.len());
    let mut centre: Option<DVector<f64>> = None;
    for j in 0..x.len() {
        let h = fd_step(x[j]);
        let mut xp = x.to_vec();
        xp[j] += h;
        let plus = g(&xp).map(DVector::from_vec);
        xp[j] = x[j] - h;
        let minus = g(&xp).map(DVector::from_vec);
        let col = match (plus, minus) {
            (Ok(a), Ok(b)) => (a - b) / (2.0 * h),
            (Ok(a), Err(_)) => {
                let c = centre.get_or_insert(DVector::from_vec(g(x)?)).clone();
                (a - c) / h
            }
            (Err(_), Ok(b)) => {
                let c = centre.get_or_insert(DVector::from_vec(g(x)?)).clone();
                (c - b) / h
            }
            (Err(e), Err(_)) => return Err(e),
        };
        cols.push(col);
    }
    Ok(DMatrix::from_columns(&cols))
}

/// `S11` and `S12` by central differences of the analytic gradient of the
/// log-likelihood at the MELE, with `eta` held at its step-one estimate for
/// `S11`.
pub fn estimate_s_blocks(problem: &ElProblem, fit: &ElFit) -> Result<SBlocks, InferenceError> {
    let dim_beta = problem.dim_beta();
    let inflated = fit.params.omega.is_some();
    let theta = theta_of(&fit.params);
    let q = theta.len();
    let n_hat = fit.params.n;
    let grad_at = |pr: &ElProblem, th: &[f64]| -> Result<Vec<f64>, ElError> {
        pr.loglik_explicit(&params_of(th, dim_beta, inflated)).map(|(_, g, _)| g)
    };

    let hess = fd_jacobian(|th| grad_at(problem, th), &theta)?;
    let hess = (&hess + hess.transpose()) * 0.5;
    let mut scale = DVector::from_element(q, 1.0);
    scale[0] = n_hat;
    let d = DMatrix::from_diagonal(&scale);
    let mut s11 = &d * hess * &d / n_hat;

    let mut diagnostics = Vec::new();
    let alpha = fit.params.alpha;
    let v11 = -alpha / (1.0 - alpha);
    let v11_numeric = s11[(0, 0)];
    if (v11_numeric - v11).abs() < V11_AGREEMENT * v11.abs() {
        s11[(0, 0)] = v11;
    } else {
        diagnostics.push(format!(
            "numerical S11(1,1) = {v11_numeric:.6} disagrees with -alpha/(1-alpha) = {v11:.6}"
        ));
    }

    let (s11, clipped) = ensure_negative_definite(s11)?;
    if clipped {
        diagnostics.push("S11 eigenvalues clipped to make it negative definite".into());
    }

    let s12 = match problem.missingness() {
        Missingness::AlwaysObserved => None,
        Missingness::Logistic(eta) => {
            let mixed = fd_jacobian(
                |e| grad_at(&problem.with_missingness(&Missingness::Logistic(e.to_vec())), &theta),
                eta,
            )?;
            Some(&d * mixed / n_hat)
        }
    };

    Ok(SBlocks { s11, s12, v11, v11_numeric, n_hat, dim_beta, inflated, clipped, diagnostics })
}

fn ensure_negative_definite(s: DMatrix<f64>) -> Result<(DMatrix<f64>, bool), InferenceError> {
    let eig = s.clone().symmetric_eigen();
    let radius = eig.eigenvalues.amax();
    let largest = eig.eigenvalues.max();
    if largest < EIGEN_CEILING {
        return Ok((s, false));
    }
    if !largest.is_finite() || largest > NOT_MAXIMUM_RATIO * radius {
        return Err(InferenceError::NonNegativeDefinite(largest));
    }
    let vals = eig.eigenvalues.map(|v| v.min(EIGEN_CEILING));
    let fixed = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    Ok(((&fixed + fixed.transpose()) * 0.5, true))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceEstimate {
    /// Asymptotic covariance of `N^{1/2} (N_hat/N - 1, beta_hat - beta, alpha_hat - alpha, [omega_hat - omega])`.
    pub sigma_hat: Vec<Vec<f64>>,
    /// `-S11^{-1}`: the covariance if `eta` were known.
    pub known_pi_sigma: Vec<Vec<f64>>,
    pub sigma2: f64,
    pub s_hat: f64,
    pub v11_hat: f64,
    /// `(s_hat - V11_hat) sigma2`; `R(N0) / scale` is approximately chi-square(1).
    pub scale: f64,
    pub se_n: f64,
    pub se_beta: Vec<f64>,
    pub se_alpha: f64,
    pub se_omega: Option<f64>,
    pub method: String,
    pub diagnostics: Vec<String>,
}

/// `Sigma = -S11^{-1} - S11^{-1} S12 U^{-1} S21 S11^{-1}` and the chi-square
/// scale `(s - V11) sigma^2`.
pub fn sigma_and_scale(blocks: &SBlocks, u: Option<&DMatrix<f64>>) -> Result<VarianceEstimate, InferenceError> {
    let s11 = &blocks.s11;
    let q = s11.nrows();
    let neg = -s11.clone();
    let chol = neg.cholesky().ok_or(InferenceError::NonNegativeDefinite(f64::NAN))?;
    let known = chol.inverse();
    let mut sigma = known.clone();
    if let (Some(s12), Some(u)) = (&blocks.s12, u) {
        let u_inv = u.clone().cholesky().ok_or(InferenceError::SingularU)?.inverse();
        // S11^{-1} S12 = -(-S11)^{-1} S12
        let b = -(&known * s12);
        sigma -= &b * u_inv * b.transpose();
    }
    let sigma = (&sigma + sigma.transpose()) * 0.5;

    let nuis = s11.view((1, 1), (q - 1, q - 1)).into_owned();
    let cross = s11.view((1, 0), (q - 1, 1)).into_owned();
    let nuis_inv = nuis.try_inverse().ok_or(InferenceError::SingularBlock)?;
    let s_hat = (cross.transpose() * nuis_inv * &cross)[(0, 0)];
    let sigma2 = sigma[(0, 0)];
    let scale = (s_hat - blocks.v11) * sigma2;
    if !(sigma2 > 0.0 && scale > 0.0) {
        return Err(InferenceError::NonPositiveScale { sigma2, scale });
    }
    let n = blocks.n_hat;
    let dim_beta = blocks.dim_beta;
    let se = |j: usize| (sigma[(j, j)].max(0.0) / n).sqrt();
    let mut diagnostics = blocks.diagnostics.clone();
    let bad: Vec<usize> = (0..q).filter(|&j| sigma[(j, j)] <= 0.0).collect();
    if !bad.is_empty() {
        diagnostics.push(format!("non-positive plug-in variance at theta entries {bad:?}; standard errors set to 0"));
    }
    Ok(VarianceEstimate {
        sigma_hat: to_rows(&sigma),
        known_pi_sigma: to_rows(&known),
        sigma2,
        s_hat,
        v11_hat: blocks.v11,
        scale,
        se_n: (n * sigma2).sqrt(),
        se_beta: (1..1 + dim_beta).map(se).collect(),
        se_alpha: se(1 + dim_beta),
        se_omega: blocks.inflated.then(|| se(q - 1)),
        method: "numerical-hessian".into(),
        diagnostics,
    })
}

/// [`estimate_s_blocks`] followed by [`sigma_and_scale`], with `U = I_eta / N_hat`.
pub fn variance(
    problem: &ElProblem,
    fit: &ElFit,
    mfit: Option<&MissingnessFit>,
) -> Result<VarianceEstimate, InferenceError> {
    let blocks = estimate_s_blocks(problem, fit)?;
    let u = mfit.map(|m| m.u_hat(fit.params.n));
    sigma_and_scale(&blocks, u.as_ref())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub level: f64,
    pub lower: f64,
    /// `f64::INFINITY` when no upper root exists below the abundance cap.
    pub upper: f64,
    pub lower_clipped: bool,
    pub unbounded_above: bool,
}

impl ConfidenceInterval {
    pub fn contains(&self, n: f64) -> bool {
        self.lower <= n && n <= self.upper
    }
}

/// Scaled EL ratio intervals `{N : R(N) / scale <= chi2_1(level)}` for
/// several levels, sharing one profile of `R`.
pub fn scaled_ci(
    problem: &ElProblem,
    fit: &ElFit,
    variance: &VarianceEstimate,
    levels: &[f64],
    opts: &FitOptions,
) -> Result<Vec<ConfidenceInterval>, InferenceError> {
    let mut profile = NProfile::new(problem, fit, opts);
    levels
        .iter()
        .map(|&level| interval(&mut profile, fit, variance, level, problem.m() as f64, opts.n_cap_factor))
        .collect()
}

fn chi2_quantile(level: f64) -> f64 {
    ChiSquared::new(1.0).expect("valid dof").inverse_cdf(level)
}

fn interval(
    profile: &mut NProfile<'_>,
    fit: &ElFit,
    variance: &VarianceEstimate,
    level: f64,
    m: f64,
    cap_factor: f64,
) -> Result<ConfidenceInterval, InferenceError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(InferenceError::Interval(format!("level {level} outside (0, 1)")));
    }
    let crit = chi2_quantile(level);
    let n_hat = fit.params.n;
    let n_cap = cap_factor * m;
    let scale = variance.scale;
    let mut g = |n: f64| -> Result<f64, RootError> {
        profile.ratio(n).map(|r| r / scale - crit).map_err(|_| RootError::NonFinite(n))
    };
    let step0 = (0.5 * variance.se_n).max(1.0);
    let root_opts = RootOptions { xtol: 1e-9 * n_hat, ftol: 1e-6, max_iter: 100 };
    let err = |e: RootError| InferenceError::Interval(e.to_string());

    // Upper end.
    let (mut a, mut fa) = (n_hat, -crit);
    let mut step = step0;
    let mut upper = f64::INFINITY;
    let mut unbounded = false;
    loop {
        let b = (n_hat + step).min(n_cap);
        let fb = g(b).map_err(err)?;
        if fb > 0.0 {
            upper = brent_with_values(&mut g, a, fa, b, fb, root_opts).map_err(err)?.0;
            break;
        }
        if b >= n_cap {
            unbounded = true;
            break;
        }
        (a, fa) = (b, fb);
        step *= 2.0;
    }

    // Lower end.
    let (mut a, mut fa) = (n_hat, -crit);
    let mut step = step0;
    let lower;
    let mut clipped = false;
    loop {
        let b = (n_hat - step).max(m);
        let fb = g(b).map_err(err)?;
        if fb > 0.0 {
            lower = brent_with_values(&mut g, b, fb, a, fa, root_opts).map_err(err)?.0;
            break;
        }
        if b <= m {
            lower = m;
            clipped = true;
            break;
        }
        (a, fa) = (b, fb);
        step *= 2.0;
    }
    Ok(ConfidenceInterval { level, lower, upper, lower_clipped: clipped, unbounded_above: unbounded })
}

/// `U_s = sum_i {pi(x_i, 1) / phi_i - I(d_i = 1) / f(1, z_i)}` over complete cases.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn score_u_s(problem: &ElProblem, beta: &[f64]) -> Result<f64, InferenceError> {
    let ev = problem.evaluate(beta, 1.0);
    let family = problem.spec().family;
    let mut total = 0.0;
    for i in 0..problem.m() {
        let zi = problem.z(i);
        let t: f64 = zi.iter().zip(beta).map(|(a, b)| a * b).sum();
        let x = &zi[1..1 + problem.spec().dim_x];
        total += problem.missingness().pi(x, 1) / ev.phi[i];
        if problem.d(i) == 1 {
            let f1 = ln_pmf(1, t, family).exp();
            if !(f1 > 0.0) {
                return Err(InferenceError::ZeroDenominator(i));
            }
            total -= 1.0 / f1;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreTestResult {
    pub u_s: f64,
    pub sigma_s2: f64,
    pub statistic: f64,
    /// `Phi(statistic)`.
    pub p_value: f64,
    pub bootstrap: usize,
    pub bootstrap_failed: usize,
}

impl ScoreTestResult {
    pub fn rejects(&self, level: f64) -> bool {
        self.p_value <= level
    }
}

/// Draws one dataset from the fitted null model: `round(N_hat)` individuals
/// with covariates from the EL-weighted complete cases.
pub fn simulate_from_null(problem: &ElProblem, fit: &ElFit, rng: &mut ChaCha8Rng) -> CaptureDataset {
    let spec = problem.spec();
    let n_total = fit.params.n.round().max(1.0) as usize;
    let pick = WeightedIndex::new(&fit.weights.p).expect("EL weights are positive");
    let mut obs = Vec::new();
    for _ in 0..n_total {
        let i = pick.sample(rng);
        let z = problem.z(i);
        let t: f64 = z.iter().zip(&fit.params.beta).map(|(a, b)| a * b).sum();
        let d = draw_count(t, spec.family, rng);
        let r = rng.random::<f64>() < problem.missingness().pi(&z[1..1 + spec.dim_x], d as u64);
        if d == 0 {
            continue;
        }
        let x = z[1..1 + spec.dim_x].to_vec();
        obs.push(if r {
            Observation::complete(d, x, z[1 + spec.dim_x..].to_vec())
        } else {
            Observation::incomplete(d, x, spec.dim_y)
        });
    }
    CaptureDataset::unnamed(obs, spec.dim_x, spec.dim_y)
}

pub(crate) fn draw_count(t: f64, family: Family, rng: &mut ChaCha8Rng) -> u32 {
    match family {
        Family::Binomial { occasions } => Binomial::new(occasions as u64, logistic(t))
            .map(|b| b.sample(rng) as u32)
            .unwrap_or(0),
        Family::Poisson => {
            let lambda = t.exp();
            if lambda > 0.0 && lambda.is_finite() {
                Poisson::new(lambda).map(|p| p.sample(rng).min(u32::MAX as f64) as u32).unwrap_or(0)
            } else {
                0
            }
        }
    }
}

/// Score-like test of `omega = 1` with the variance of `N^{-1/2} U_s`
/// estimated by a parametric bootstrap from the fitted null model.
#[allow(clippy::too_many_arguments)]
pub fn one_inflation_test(
    problem: &ElProblem,
    fit_null: &ElFit,
    b: usize,
    seed: u64,
    exec: Exec,
    opts: &FitOptions,
) -> Result<ScoreTestResult, InferenceError> {
    if b < MIN_BOOTSTRAP {
        return Err(InferenceError::TooFewBootstrap(b));
    }
    if problem.spec().one_inflated {
        return Err(InferenceError::El(ElError::Infeasible("the null fit must not be one-inflated".into())));
    }
    let u_s = score_u_s(problem, &fit_null.params.beta)?;
    let estimate_missingness = matches!(problem.missingness(), Missingness::Logistic(_));
    let spec = problem.spec().clone();
    let boot_opts = FitOptions { multistart: false, ..*opts };
    let draws: Vec<Option<f64>> = exec.map_indexed(b, |rep| {
        let mut rng = rng_for(seed, rep as u64, 0);
        let ds = simulate_from_null(problem, fit_null, &mut rng);
        bootstrap_score(&ds, &spec, estimate_missingness, fit_null, &boot_opts)
    });
    let ok: Vec<f64> = draws.iter().flatten().copied().collect();
    let failed = b - ok.len();
    if failed as f64 > MAX_BOOTSTRAP_FAILURE * b as f64 || ok.len() < 2 {
        return Err(InferenceError::BootstrapFailure { failed, total: b });
    }
    let mean = ok.iter().sum::<f64>() / ok.len() as f64;
    let sigma_s2 = ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (ok.len() - 1) as f64;
    let statistic = u_s / (fit_null.params.n.sqrt() * sigma_s2.sqrt());
    let p_value = Normal::standard().cdf(statistic);
    Ok(ScoreTestResult { u_s, sigma_s2, statistic, p_value, bootstrap: ok.len(), bootstrap_failed: failed })
}

fn bootstrap_score(
    ds: &CaptureDataset,
    spec: &CaptureModelSpec,
    estimate_missingness: bool,
    fit_null: &ElFit,
    opts: &FitOptions,
) -> Option<f64> {
    let ds = ds.validate(spec).ok()?;
    let missingness = if estimate_missingness {
        fit_missingness(&ds).ok()?.missingness()
    } else {
        Missingness::AlwaysObserved
    };
    let problem = ElProblem::new(&ds, spec, &missingness).ok()?;
    let fit = fit_mele_from(&problem, std::slice::from_ref(&fit_null.params.beta), None, opts).ok()?;
    if !fit.converged {
        return None;
    }
    let u = score_u_s(&problem, &fit.params.beta).ok()?;
    Some(u / fit.params.n.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn blocks(s11: DMatrix<f64>, s12: Option<DMatrix<f64>>) -> SBlocks {
        let v11 = s11[(0, 0)];
        let dim_beta = s11.nrows() - 2;
        SBlocks { s11, s12, v11, v11_numeric: v11, n_hat: 100.0, dim_beta, inflated: false, clipped: false, diagnostics: vec![] }
    }

    #[test]
    fn zero_cross_block_gives_known_pi_variance() {
        let s11 = DMatrix::from_row_slice(3, 3, &[-1.0, 0.2, 0.1, 0.2, -2.0, 0.3, 0.1, 0.3, -1.5]);
        let s12 = DMatrix::zeros(3, 2);
        let u = DMatrix::identity(2, 2);
        let v = sigma_and_scale(&blocks(s11.clone(), Some(s12)), Some(&u)).unwrap();
        let known = (-s11).try_inverse().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(v.sigma_hat[i][j], known[(i, j)], epsilon = 1e-12);
            }
        }
        // Without a cross term the scale is exactly one.
        assert_abs_diff_eq!(v.scale, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn hand_two_by_two() {
        // S11 = [[-2, 1], [1, -3]], S12 = [1, 0]^T, U = 2.
        // -S11^{-1} = [[3, 1], [1, 2]] / 5, S11^{-1} S12 = -[3, 1]^T / 5,
        // Sigma = -S11^{-1} - [[9, 3], [3, 1]] / 50.
        let s11 = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -3.0]);
        let s12 = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let u = DMatrix::from_element(1, 1, 2.0);
        let v = sigma_and_scale(&blocks(s11, Some(s12)), Some(&u)).unwrap();
        assert_abs_diff_eq!(v.sigma_hat[0][0], 0.6 - 0.18, epsilon = 1e-12);
        assert_abs_diff_eq!(v.sigma_hat[0][1], 0.2 - 0.06, epsilon = 1e-12);
        assert_abs_diff_eq!(v.sigma_hat[1][1], 0.4 - 0.02, epsilon = 1e-12);
        // s = 1 * (1/-3) * 1, scale = (s - V11) sigma2 = (-1/3 + 2) * 0.42.
        assert_abs_diff_eq!(v.s_hat, -1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.scale, (5.0 / 3.0) * 0.42, epsilon = 1e-12);
    }

    #[test]
    fn estimating_eta_never_increases_variance() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.random::<f64>() - 0.5);
            let s11 = -(&a * a.transpose() + DMatrix::identity(4, 4) * 0.1);
            let s12 = DMatrix::from_fn(4, 3, |_, _| rng.random::<f64>() - 0.5);
            let c = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() - 0.5);
            let u = &c * c.transpose() + DMatrix::identity(3, 3) * 0.1;
            let Ok(v) = sigma_and_scale(&blocks(s11, Some(s12)), Some(&u)) else { continue };
            for j in 0..4 {
                assert!(v.sigma_hat[j][j] <= v.known_pi_sigma[j][j] + 1e-8);
            }
        }
    }

    #[test]
    fn clipping_repairs_tiny_positive_eigenvalue() {
        let s = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1e-9]);
        let (fixed, clipped) = ensure_negative_definite(s).unwrap();
        assert!(clipped);
        assert!(fixed.symmetric_eigen().eigenvalues.max() <= EIGEN_CEILING * 0.99);
        let bad = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.5]);
        assert!(matches!(ensure_negative_definite(bad), Err(InferenceError::NonNegativeDefinite(_))));
    }

    #[test]
    fn jacobian_of_quadratic_gradient_is_its_hessian() {
        let h = DMatrix::from_row_slice(3, 3, &[-4.0, 1.0, 0.5, 1.0, -3.0, 0.2, 0.5, 0.2, -2.0]);
        let x0 = [250.0, -1.2, 0.4];
        let grad = |x: &[f64]| -> Result<Vec<f64>, ElError> {
            let v = &h * DVector::from_column_slice(x);
            Ok(v.iter().copied().collect())
        };
        let j = fd_jacobian(grad, &x0).unwrap();
        assert!((j - &h).amax() < 1e-6);
    }

    #[test]
    fn chi2_critical_values() {
        assert_abs_diff_eq!(chi2_quantile(0.95), 3.841458820694124, epsilon = 1e-9);
        assert_abs_diff_eq!(chi2_quantile(0.99), 6.634896601021214, epsilon = 1e-9);
    }
}
