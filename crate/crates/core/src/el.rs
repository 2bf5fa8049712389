//! Semiparametric empirical likelihood for the abundance.
//!
//! For fixed `(N, beta[, omega])` the inclusion probabilities `phi_i` of the
//! `m` complete cases are fixed, and the EL part of the log-likelihood is
//!
//! ```text
//! log C(N, m) + (N - m) log(1 - alpha) - sum_i log{1 + xi (phi_i - alpha)}
//! ```
//!
//! with `xi` the Lagrange multiplier of `sum_i p_i (phi_i - alpha) = 0`. Its
//! maximizer in `alpha` satisfies `xi = (N - m) / {m (1 - alpha)}`, which turns
//! the pair of equations into one strictly decreasing equation in `alpha`
//! (see [`profile_alpha`]). The optimizers therefore only search over
//! `log(N - m)`, `beta` and `logit(omega)`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use thiserror::Error;

use crate::data::{stack_z, CaptureDataset, CaptureModelSpec, Family};
use crate::missingness::Missingness;
use crate::models::{ln_h_with_grad, ln_pmf, logistic, survival, InclusionSums};
use crate::optim::{minimize, newton_polish, BfgsOptions, BfgsResult};
use crate::roots::newton_decreasing;

/// Largest `|logit(omega)|` explored by the optimizer.
const OMEGA_LOGIT_BOUND: f64 = 30.0;
/// `omega` above this is reported as sitting on the no-inflation boundary.
pub const OMEGA_BOUNDARY_TOL: f64 = 1e-6;
const XI_TOL: f64 = 1e-12;
const POLISH_ITER: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ElError {
    #[error("alpha = {alpha} is not strictly inside the range of phi ({min}, {max})")]
    NoInteriorRoot { alpha: f64, min: f64, max: f64 },
    #[error("infeasible parameter point: {0}")]
    Infeasible(String),
    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElParams {
    /// Abundance, treated as continuous.
    pub n: f64,
    pub beta: Vec<f64>,
    pub alpha: f64,
    /// One-inflation parameter; `None` for the plain model.
    pub omega: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiSolution {
    pub xi: f64,
    pub residual: f64,
    pub bracket: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElWeights {
    pub p: Vec<f64>,
}

/// Solves `sum_i (phi_i - alpha) / {1 + xi (phi_i - alpha)} = 0`.
///
/// The left side is strictly decreasing in `xi` between the poles
/// `-1 / max(delta)` and `-1 / min(delta)`, so the root is unique.
pub fn solve_xi(phis: &[f64], alpha: f64) -> Result<XiSolution, ElError> {
    let (min, max) = phis
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &p| (a.min(p), b.max(p)));
    if !(alpha > min && alpha < max) {
        return Err(ElError::NoInteriorRoot { alpha, min, max });
    }
    let lo = -1.0 / (max - alpha);
    let hi = -1.0 / (min - alpha);
    let scale: f64 = phis.iter().map(|p| (p - alpha).abs()).sum();
    let eval = |xi: f64| {
        let mut s = 0.0;
        let mut ds = 0.0;
        for &p in phis {
            let dlt = p - alpha;
            let den = 1.0 + xi * dlt;
            s += dlt / den;
            ds -= (dlt / den) * (dlt / den);
        }
        (s, ds)
    };
    let (xi, residual) = newton_decreasing(eval, lo, hi, 0.0, XI_TOL * scale.max(1e-300), 200)
        .map_err(|e| ElError::Infeasible(e.to_string()))?;
    Ok(XiSolution { xi, residual, bracket: (lo, hi) })
}

/// `p_i = 1 / [m {1 + xi (phi_i - alpha)}]`.
pub fn el_weights(phis: &[f64], alpha: f64, xi: f64) -> ElWeights {
    let m = phis.len() as f64;
    ElWeights { p: phis.iter().map(|&p| 1.0 / (m * (1.0 + xi * (p - alpha)))).collect() }
}

/// The `alpha` maximizing the EL part for fixed `phi` and `c = (N - m) / m`.
///
/// Solves `G(a) = sum_i (phi_i - a) / (1 + c phi_i - a (1 + c)) = 0`;
/// `G' = sum_i (phi_i - 1) / den_i^2 < 0`, `G(min phi) >= 0`, and `G -> -inf`
/// at the first pole `(1 + c min phi) / (1 + c)`.
pub fn profile_alpha(phis: &[f64], c: f64) -> f64 {
    let m = phis.len() as f64;
    let mean = phis.iter().sum::<f64>() / m;
    if c == 0.0 {
        return mean;
    }
    let (min, max) = phis
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &p| (a.min(p), b.max(p)));
    if max - min <= f64::EPSILON * max {
        return mean;
    }
    let pole = (1.0 + c * min) / (1.0 + c);
    let hi = pole.min(max);
    let eval = |a: f64| {
        let mut g = 0.0;
        let mut dg = 0.0;
        for &p in phis {
            let den = 1.0 + c * p - a * (1.0 + c);
            g += (p - a) / den;
            dg += (p - 1.0) / (den * den);
        }
        (g, dg)
    };
    // Start from the root of the linearization around all den_i equal.
    let x0 = (mean * (1.0 + c) - c * mean) / (1.0 + c);
    newton_decreasing(eval, min, hi, x0.min(mean), 1e-15 * m, 200)
        .map(|(a, _)| a)
        .unwrap_or(mean)
}

/// Per-individual quantities at `(beta, omega)`.
#[derive(Debug, Clone, Default)]
pub struct Evaluated {
    pub phi: Vec<f64>,
    pub dphi_dt: Vec<f64>,
    pub dphi_domega: Vec<f64>,
    pub ln_h: Vec<f64>,
    pub dlnh_dt: Vec<f64>,
    pub dlnh_domega: Vec<f64>,
}

impl Evaluated {
    pub fn sum_ln_h(&self) -> f64 {
        self.ln_h.iter().sum()
    }
}

/// Complete-case data with the non-missingness probabilities tabulated.
#[derive(Debug, Clone)]
pub struct ElProblem {
    spec: CaptureModelSpec,
    m: usize,
    dim_z: usize,
    z: Vec<f64>,
    d: Vec<u32>,
    pi_cache: usize,
    pi_table: Vec<f64>,
    x: Vec<Vec<f64>>,
    missingness: Missingness,
}

impl ElProblem {
    pub fn new(dataset: &CaptureDataset, spec: &CaptureModelSpec, missingness: &Missingness) -> Result<Self, ElError> {
        let cc: Vec<&crate::data::Observation> = dataset.observations().iter().filter(|o| o.r).collect();
        let dim_z = spec.dim_z();
        let mut z = Vec::with_capacity(cc.len() * dim_z);
        for o in &cc {
            let zi = stack_z(o)?;
            if zi.len() != dim_z {
                return Err(ElError::Infeasible("covariate layout does not match the model".into()));
            }
            z.extend_from_slice(&zi);
        }
        let pi_cache = match spec.family {
            Family::Binomial { occasions } => occasions as usize,
            Family::Poisson => 64,
        };
        let x: Vec<Vec<f64>> = cc.iter().map(|o| o.x.clone()).collect();
        let mut pi_table = Vec::with_capacity(cc.len() * pi_cache);
        for xi in &x {
            pi_table.extend((1..=pi_cache as u64).map(|k| missingness.pi(xi, k)));
        }
        Ok(ElProblem {
            spec: spec.clone(),
            m: cc.len(),
            dim_z,
            z,
            d: cc.iter().map(|o| o.d).collect(),
            pi_cache,
            pi_table,
            x,
            missingness: missingness.clone(),
        })
    }

    /// Same data with a different non-missingness model.
    pub fn with_missingness(&self, missingness: &Missingness) -> Self {
        let mut pi_table = Vec::with_capacity(self.m * self.pi_cache);
        for xi in &self.x {
            pi_table.extend((1..=self.pi_cache as u64).map(|k| missingness.pi(xi, k)));
        }
        ElProblem { pi_table, missingness: missingness.clone(), ..self.clone() }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn spec(&self) -> &CaptureModelSpec {
        &self.spec
    }

    pub fn missingness(&self) -> &Missingness {
        &self.missingness
    }

    pub fn dim_beta(&self) -> usize {
        self.dim_z
    }

    pub fn z(&self, i: usize) -> &[f64] {
        &self.z[i * self.dim_z..(i + 1) * self.dim_z]
    }

    pub fn d(&self, i: usize) -> u32 {
        self.d[i]
    }

    #[inline]
    fn pi(&self, i: usize, k: u64) -> f64 {
        if k >= 1 && (k as usize) <= self.pi_cache {
            self.pi_table[i * self.pi_cache + k as usize - 1]
        } else {
            self.missingness.pi(&self.x[i], k)
        }
    }

    fn t(&self, i: usize, beta: &[f64]) -> f64 {
        self.z(i).iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    /// `phi_i` (or `phi_e`) and `log f(d_i)` (or `log h`) with derivatives.
    pub fn evaluate(&self, beta: &[f64], omega: f64) -> Evaluated {
        let m = self.m;
        let mut ev = Evaluated {
            phi: Vec::with_capacity(m),
            dphi_dt: Vec::with_capacity(m),
            dphi_domega: Vec::with_capacity(m),
            ln_h: Vec::with_capacity(m),
            dlnh_dt: Vec::with_capacity(m),
            dlnh_domega: Vec::with_capacity(m),
        };
        let family = self.spec.family;
        for i in 0..m {
            let t = self.t(i, beta);
            let sums = InclusionSums::compute(t, family, |k| self.pi(i, k));
            let (phi, dt, dw) = sums.phi_e(omega, self.pi(i, 1));
            ev.phi.push(phi);
            ev.dphi_dt.push(dt);
            ev.dphi_domega.push(dw);
            let (lh, lt, lw) = ln_h_with_grad(self.d[i] as u64, t, omega, family);
            ev.ln_h.push(lh);
            ev.dlnh_dt.push(lt);
            ev.dlnh_domega.push(lw);
        }
        ev
    }

    /// Log-likelihood at explicit `(N, beta, omega, alpha)` with `xi` solved
    /// from the constraint. Returns the value and the gradient ordered as
    /// `(N, beta, alpha, [omega])`.
    pub fn loglik_explicit(&self, params: &ElParams) -> Result<(f64, Vec<f64>, XiSolution), ElError> {
        let m = self.m as f64;
        if params.n < m {
            return Err(ElError::Infeasible(format!("N = {} < m = {}", params.n, self.m)));
        }
        if !(params.alpha > 0.0 && params.alpha < 1.0) {
            return Err(ElError::Infeasible(format!("alpha = {} outside (0, 1)", params.alpha)));
        }
        let omega = params.omega.unwrap_or(1.0);
        if !(omega > 0.0 && omega <= 1.0) {
            return Err(ElError::Infeasible(format!("omega = {omega} outside (0, 1]")));
        }
        let ev = self.evaluate(&params.beta, omega);
        let sol = solve_xi(&ev.phi, params.alpha)?;
        let (n, alpha, xi) = (params.n, params.alpha, sol.xi);
        let mut value = ln_choose_real(n, m) + (n - m) * (-alpha).ln_1p() + ev.sum_ln_h();
        let mut dbeta = vec![0.0; self.dim_z];
        let mut domega = 0.0;
        let mut inv_sum = 0.0;
        for i in 0..self.m {
            let den = 1.0 + xi * (ev.phi[i] - alpha);
            value -= den.ln();
            inv_sum += 1.0 / den;
            let w = xi / den;
            let dt = ev.dlnh_dt[i] - w * ev.dphi_dt[i];
            for (g, zj) in dbeta.iter_mut().zip(self.z(i)) {
                *g += dt * zj;
            }
            domega += ev.dlnh_domega[i] - w * ev.dphi_domega[i];
        }
        let mut grad = Vec::with_capacity(self.dim_z + 3);
        grad.push(digamma(n + 1.0) - digamma(n - m + 1.0) + (-alpha).ln_1p());
        grad.extend(dbeta);
        grad.push(-(n - m) / (1.0 - alpha) + xi * inv_sum);
        if params.omega.is_some() {
            grad.push(domega);
        }
        Ok((value, grad, sol))
    }

    /// Log-likelihood maximized over `alpha`, with gradient in
    /// `(N, beta, omega)`. Also returns the maximizing `alpha` and `xi`.
    // Negated comparisons reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn profiled(&self, n: f64, beta: &[f64], omega: f64, grad: Option<&mut [f64]>) -> Profiled {
        let m = self.m as f64;
        let ev = self.evaluate(beta, omega);
        if ev.phi.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Profiled::infeasible();
        }
        let c = (n - m) / m;
        let alpha = profile_alpha(&ev.phi, c);
        let one_minus = 1.0 - alpha;
        let xi = c / one_minus;
        let mut value = ln_choose_real(n, m) + n * one_minus.ln() + ev.sum_ln_h();
        let mut dbeta = vec![0.0; self.dim_z];
        let mut domega = 0.0;
        for i in 0..self.m {
            let den = 1.0 + c * ev.phi[i] - alpha * (1.0 + c);
            if !(den > 0.0) {
                return Profiled::infeasible();
            }
            value -= den.ln();
            let w = c / den;
            let dt = ev.dlnh_dt[i] - w * ev.dphi_dt[i];
            for (g, zj) in dbeta.iter_mut().zip(self.z(i)) {
                *g += dt * zj;
            }
            domega += ev.dlnh_domega[i] - w * ev.dphi_domega[i];
        }
        if let Some(g) = grad {
            g[0] = digamma(n + 1.0) - digamma(n - m + 1.0) + one_minus.ln();
            g[1..1 + self.dim_z].copy_from_slice(&dbeta);
            if g.len() > 1 + self.dim_z {
                g[1 + self.dim_z] = domega;
            }
        }
        Profiled { value, alpha, xi }
    }

    /// Conditional (zero-truncated) MLE of `beta` from the complete cases;
    /// used as a starting value.
    pub fn zero_truncated_beta(&self) -> Vec<f64> {
        let family = self.spec.family;
        let p = self.dim_z;
        let obj = |b: &[f64], g: &mut [f64]| {
            g.iter_mut().for_each(|v| *v = 0.0);
            let mut v = 0.0;
            for i in 0..self.m {
                let t = self.t(i, b);
                let d = self.d[i] as u64;
                let surv = survival(t, family);
                let mu = crate::models::mean_count(t, family);
                let f0 = ln_pmf(0, t, family).exp();
                v += ln_pmf(d, t, family) - surv.ln();
                let dt = d as f64 - mu - mu * f0 / surv;
                for (gj, zj) in g.iter_mut().zip(self.z(i)) {
                    *gj += dt * zj;
                }
            }
            g.iter_mut().for_each(|x| *x = -*x);
            if v.is_finite() {
                -v
            } else {
                f64::INFINITY
            }
        };
        let lower = vec![-50.0; p];
        let upper = vec![50.0; p];
        let opts = BfgsOptions { gtol: 1e-8, ftol: 1e-12, max_iter: 200, max_step: 2.0 };
        minimize(obj, &vec![0.0; p], &lower, &upper, &opts).x
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Profiled {
    pub value: f64,
    pub alpha: f64,
    pub xi: f64,
}

impl Profiled {
    fn infeasible() -> Self {
        Profiled { value: f64::NEG_INFINITY, alpha: f64::NAN, xi: f64::NAN }
    }
}

/// `log C(N, m)` extended to real `N >= m`.
pub fn ln_choose_real(n: f64, m: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(m + 1.0) - ln_gamma(n - m + 1.0)
}

/// Log-likelihood at explicit parameters.
pub fn profile_loglik(
    params: &ElParams,
    dataset: &CaptureDataset,
    spec: &CaptureModelSpec,
    missingness: &Missingness,
) -> Result<f64, ElError> {
    let problem = ElProblem::new(dataset, spec, missingness)?;
    problem.loglik_explicit(params).map(|(v, _, _)| v)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitOptions {
    /// Upper limit on `N` as a multiple of `m`.
    pub n_cap_factor: f64,
    pub gtol: f64,
    pub ftol: f64,
    pub max_iter: usize,
    /// Also start from `beta = 0` in addition to the zero-truncated fit.
    pub multistart: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { n_cap_factor: 100.0, gtol: 1e-6, ftol: 1e-13, max_iter: 500, multistart: true }
    }
}

impl FitOptions {
    fn bfgs(&self) -> BfgsOptions {
        BfgsOptions { gtol: self.gtol, ftol: self.ftol, max_iter: self.max_iter, max_step: 2.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitTrace {
    pub iterations: usize,
    pub evaluations: usize,
    pub start: usize,
    pub gradient_norm: f64,
    pub hit_n_cap: bool,
    pub boundary_omega: bool,
    pub termination: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElFit {
    pub params: ElParams,
    pub xi: XiSolution,
    pub weights: ElWeights,
    pub phi: Vec<f64>,
    pub loglik: f64,
    pub missingness: Missingness,
    pub converged: bool,
    pub trace: FitTrace,
}

impl ElFit {
    pub fn n_hat(&self) -> f64 {
        self.params.n
    }
}

/// Box bounds and transforms for `x = (log(N - m), beta, [logit omega])`.
struct Layout {
    m: f64,
    dim_beta: usize,
    inflated: bool,
}

impl Layout {
    fn dim(&self) -> usize {
        1 + self.dim_beta + usize::from(self.inflated)
    }

    fn bounds(&self, n_cap: f64) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![-30.0];
        let mut hi = vec![(n_cap - self.m).ln()];
        lo.extend(std::iter::repeat_n(-50.0, self.dim_beta));
        hi.extend(std::iter::repeat_n(50.0, self.dim_beta));
        if self.inflated {
            lo.push(-OMEGA_LOGIT_BOUND);
            hi.push(OMEGA_LOGIT_BOUND);
        }
        (lo, hi)
    }

    fn encode(&self, n: f64, beta: &[f64], omega: f64) -> Vec<f64> {
        let mut x = vec![(n - self.m).max(1e-12).ln()];
        x.extend_from_slice(beta);
        if self.inflated {
            let w = omega.clamp(1e-12, 1.0 - 1e-12);
            x.push((w / (1.0 - w)).ln().clamp(-OMEGA_LOGIT_BOUND, OMEGA_LOGIT_BOUND));
        }
        x
    }

    fn omega(&self, x: &[f64]) -> f64 {
        if self.inflated {
            logistic(x[1 + self.dim_beta])
        } else {
            1.0
        }
    }
}

fn objective_full<'a>(problem: &'a ElProblem, layout: &'a Layout) -> impl FnMut(&[f64], &mut [f64]) -> f64 + 'a {
    move |x: &[f64], g: &mut [f64]| {
        let excess = x[0].exp();
        let n = layout.m + excess;
        let omega = layout.omega(x);
        let prof = problem.profiled(n, &x[1..1 + layout.dim_beta], omega, Some(g));
        if !prof.value.is_finite() {
            return f64::INFINITY;
        }
        g[0] *= excess;
        if layout.inflated {
            g[1 + layout.dim_beta] *= omega * (1.0 - omega);
        }
        g.iter_mut().for_each(|v| *v = -*v);
        -prof.value
    }
}

/// Maximizes over `(beta, [omega])` with `N` fixed.
pub fn maximize_at_n(
    problem: &ElProblem,
    n: f64,
    beta0: &[f64],
    omega0: Option<f64>,
    opts: &FitOptions,
) -> (Vec<f64>, Option<f64>, Profiled, BfgsResult) {
    let p = problem.dim_beta();
    let inflated = omega0.is_some();
    let mut x0 = beta0.to_vec();
    let mut lo = vec![-50.0; p];
    let mut hi = vec![50.0; p];
    if let Some(w) = omega0 {
        let w = w.clamp(1e-12, 1.0 - 1e-12);
        x0.push((w / (1.0 - w)).ln().clamp(-OMEGA_LOGIT_BOUND, OMEGA_LOGIT_BOUND));
        lo.push(-OMEGA_LOGIT_BOUND);
        hi.push(OMEGA_LOGIT_BOUND);
    }
    let mut gfull = vec![0.0; p + 2];
    let mut obj = |x: &[f64], g: &mut [f64]| {
        let omega = if inflated { logistic(x[p]) } else { 1.0 };
        let prof = problem.profiled(n, &x[..p], omega, Some(&mut gfull[..1 + x.len()]));
        if !prof.value.is_finite() {
            return f64::INFINITY;
        }
        for j in 0..p {
            g[j] = -gfull[1 + j];
        }
        if inflated {
            g[p] = -gfull[1 + p] * omega * (1.0 - omega);
        }
        -prof.value
    };
    let res = minimize(&mut obj, &x0, &lo, &hi, &opts.bfgs());
    let res = newton_polish(&mut obj, res, &lo, &hi, 1e-2 * opts.gtol, POLISH_ITER);
    let beta = res.x[..p].to_vec();
    let omega = inflated.then(|| logistic(res.x[p]));
    let prof = problem.profiled(n, &beta, omega.unwrap_or(1.0), None);
    (beta, omega, prof, res)
}

/// Two-step maximum EL estimate of `(N, beta, [omega], alpha)`.
pub fn fit_mele(problem: &ElProblem, opts: &FitOptions) -> Result<ElFit, ElError> {
    let zt = problem.zero_truncated_beta();
    let mut starts = vec![zt];
    if opts.multistart {
        starts.push(vec![0.0; problem.dim_beta()]);
    }
    fit_mele_from(problem, &starts, None, opts)
}

/// [`fit_mele`] from caller-supplied `beta` starting points (and optionally a
/// starting abundance shared by all of them).
pub fn fit_mele_from(
    problem: &ElProblem,
    starts: &[Vec<f64>],
    n_start: Option<f64>,
    opts: &FitOptions,
) -> Result<ElFit, ElError> {
    let m = problem.m() as f64;
    let inflated = problem.spec().one_inflated;
    let layout = Layout { m, dim_beta: problem.dim_beta(), inflated };
    let n_cap = opts.n_cap_factor * m;
    let (lo, hi) = layout.bounds(n_cap);
    let omega0 = if inflated { 0.9 } else { 1.0 };

    let mut best: Option<(usize, BfgsResult)> = None;
    for (s, beta0) in starts.iter().enumerate() {
        let n0 = n_start.unwrap_or_else(|| {
            let ev = problem.evaluate(beta0, omega0);
            ev.phi.iter().map(|p| 1.0 / p.max(1e-12)).sum::<f64>()
        });
        let n0 = n0.clamp(m + 1.0, 0.5 * n_cap);
        let x0 = layout.encode(n0, beta0, omega0);
        debug_assert_eq!(x0.len(), layout.dim());
        let res = minimize(objective_full(problem, &layout), &x0, &lo, &hi, &opts.bfgs());
        let res = newton_polish(objective_full(problem, &layout), res, &lo, &hi, 1e-2 * opts.gtol, POLISH_ITER);
        if !res.f.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((_, b)) => {
                let (nb, nr) = (b.x[0], res.x[0]);
                res.f < b.f - 1e-9 * (1.0 + b.f.abs()) || ((res.f - b.f).abs() <= 1e-9 * (1.0 + b.f.abs()) && nr < nb)
            }
        };
        if better {
            best = Some((s, res));
        }
    }
    let (start, res) = best.ok_or_else(|| ElError::NonConvergence("no start produced a finite likelihood".into()))?;
    finish_fit(problem, &layout, res, start, &lo, &hi)
}

fn finish_fit(
    problem: &ElProblem,
    layout: &Layout,
    res: BfgsResult,
    start: usize,
    lo: &[f64],
    hi: &[f64],
) -> Result<ElFit, ElError> {
    let m = layout.m;
    let n = m + res.x[0].exp();
    let beta = res.x[1..1 + layout.dim_beta].to_vec();
    let omega = layout.omega(&res.x);
    let prof = problem.profiled(n, &beta, omega, None);
    let ev = problem.evaluate(&beta, omega);
    // Independent check of the multiplier via the constraint equation.
    let xi = if n > m {
        solve_xi(&ev.phi, prof.alpha)?
    } else {
        XiSolution { xi: 0.0, residual: 0.0, bracket: (f64::NEG_INFINITY, f64::INFINITY) }
    };
    let weights = el_weights(&ev.phi, prof.alpha, xi.xi);
    let gradient_norm = res.projected_gradient_norm(lo, hi);
    let hit_n_cap = res.x[0] >= hi[0] - 1e-9;
    let boundary_omega = layout.inflated && omega > 1.0 - OMEGA_BOUNDARY_TOL;
    Ok(ElFit {
        params: ElParams {
            n,
            beta,
            alpha: prof.alpha,
            omega: layout.inflated.then_some(omega),
        },
        xi,
        weights,
        phi: ev.phi,
        loglik: prof.value,
        missingness: problem.missingness().clone(),
        converged: res.converged() && !hit_n_cap,
        trace: FitTrace {
            iterations: res.iterations,
            evaluations: res.evaluations,
            start,
            gradient_norm,
            hit_n_cap,
            boundary_omega,
            termination: format!("{:?}", res.termination),
        },
    })
}

/// Profile of the log-likelihood in `N`, warm-started from nearby solutions.
pub struct NProfile<'a> {
    problem: &'a ElProblem,
    fit: &'a ElFit,
    opts: FitOptions,
    cache: Vec<(f64, Vec<f64>, Option<f64>, f64)>,
}

impl<'a> NProfile<'a> {
    pub fn new(problem: &'a ElProblem, fit: &'a ElFit, opts: &FitOptions) -> Self {
        NProfile { problem, fit, opts: *opts, cache: Vec::new() }
    }

    /// `max_{beta, omega, alpha} l(N, ...)`.
    pub fn loglik_at(&mut self, n: f64) -> Result<f64, ElError> {
        let (beta0, omega0) = self
            .cache
            .iter()
            .min_by(|a, b| (a.0 - n).abs().total_cmp(&(b.0 - n).abs()))
            .filter(|c| (c.0 - n).abs() < (self.fit.params.n - n).abs())
            .map(|c| (c.1.clone(), c.2))
            .unwrap_or_else(|| (self.fit.params.beta.clone(), self.fit.params.omega));
        let (beta, omega, prof, res) = maximize_at_n(self.problem, n, &beta0, omega0, &self.opts);
        if !prof.value.is_finite() {
            return Err(ElError::Infeasible(format!("no finite likelihood at N = {n}")));
        }
        if !res.converged() && res.projected_gradient_norm(&[], &[]).is_nan() {
            return Err(ElError::NonConvergence(format!("profile at N = {n}")));
        }
        self.cache.push((n, beta, omega, prof.value));
        Ok(prof.value)
    }

    /// `R(N) = 2 {l_hat - l_N}`, floored at zero.
    pub fn ratio(&mut self, n: f64) -> Result<f64, ElError> {
        let l = self.loglik_at(n)?;
        Ok((2.0 * (self.fit.loglik - l)).max(0.0))
    }
}

/// EL ratio statistic `R(N)`.
pub fn el_ratio(n: f64, problem: &ElProblem, fit: &ElFit, opts: &FitOptions) -> Result<f64, ElError> {
    if n < problem.m() as f64 {
        return Err(ElError::Infeasible(format!("N = {n} below m = {}", problem.m())));
    }
    NProfile::new(problem, fit, opts).ratio(n)
}
