//! Box-constrained BFGS for the low-dimensional likelihood problems.
//!
//! Minimizes; callers maximizing a log-likelihood pass its negative. The
//! objective may return `+inf` to mark an infeasible point.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    /// Projected-gradient sup-norm tolerance.
    pub gtol: f64,
    /// Relative objective change tolerance.
    pub ftol: f64,
    pub max_iter: usize,
    /// Largest change of any coordinate on the first trial of a line search.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { gtol: 1e-6, ftol: 1e-10, max_iter: 500, max_step: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    ObjectiveChange,
    LineSearch,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl BfgsResult {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Gradient | Termination::ObjectiveChange)
    }

    /// Sup-norm of the gradient with components pushing into an active bound removed.
    pub fn projected_gradient_norm(&self, lower: &[f64], upper: &[f64]) -> f64 {
        projected_gradient(&self.x, &self.grad, lower, upper).amax()
    }
}

fn projected_gradient(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|i| {
            if (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0) {
                0.0
            } else {
                g[i]
            }
        }),
    )
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

/// Projected BFGS with backtracking Armijo line search.
pub fn minimize<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &BfgsOptions) -> BfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    let mut small_changes = 0;

    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    for iter in 0..opts.max_iter {
        let pg = projected_gradient(&x, &g, lower, upper);
        if pg.amax() <= opts.gtol {
            return BfgsResult { x, f: fx, grad: g, iterations: iter, evaluations, termination: Termination::Gradient };
        }

        let active: Vec<bool> = (0..n)
            .map(|i| (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0))
            .collect();
        let mut dir = -(&hinv * &pg);
        for i in 0..n {
            if active[i] {
                dir[i] = 0.0;
            }
        }
        let mut slope = dir.dot(&pg);
        if slope >= 0.0 {
            // Lost descent: restart from steepest descent.
            hinv = DMatrix::identity(n, n);
            scaled = false;
            dir = -pg.clone();
            slope = dir.dot(&pg);
        }
        // Keep the first trial step moderate in any single coordinate.
        let longest = dir.amax();
        let mut t = if longest > opts.max_step { opts.max_step / longest } else { 1.0 };

        let mut accepted = false;
        let mut f_trial = f64::INFINITY;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + t * dir[i];
            }
            project(&mut x_new, lower, upper);
            f_trial = f(&x_new, &mut g_new);
            evaluations += 1;
            let decrease: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
            if f_trial.is_finite() && f_trial <= fx + 1e-4 * decrease {
                accepted = true;
                break;
            }
            // Quadratic interpolation, kept in [0.1 t, 0.5 t].
            let next = if f_trial.is_finite() {
                let denom = 2.0 * (f_trial - fx - t * slope);
                if denom > 0.0 {
                    (-slope * t * t / denom).clamp(0.1 * t, 0.5 * t)
                } else {
                    0.5 * t
                }
            } else {
                0.25 * t
            };
            t = next;
        }
        if !accepted {
            return BfgsResult { x, f: fx, grad: g, iterations: iter, evaluations, termination: Termination::LineSearch };
        }

        let s = DVector::from_iterator(n, (0..n).map(|i| x_new[i] - x[i]));
        let y = DVector::from_iterator(n, (0..n).map(|i| g_new[i] - g[i]));
        let change = fx - f_trial;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_trial;

        if change.abs() <= opts.ftol * (1.0 + fx.abs()) {
            small_changes += 1;
            if small_changes >= 3 {
                return BfgsResult {
                    x,
                    f: fx,
                    grad: g,
                    iterations: iter + 1,
                    evaluations,
                    termination: Termination::ObjectiveChange,
                };
            }
        } else {
            small_changes = 0;
        }

        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if !scaled {
                hinv = DMatrix::identity(n, n) * (sy / y.dot(&y));
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (s hy' + hy s') + (rho^2 y'Hy + rho) s s'
            hinv.ger(-rho, &s, &hy, 1.0);
            hinv.ger(-rho, &hy, &s, 1.0);
            hinv.ger(rho * rho * yhy + rho, &s, &s, 1.0);
        }
    }
    BfgsResult { x, f: fx, grad: g, iterations: opts.max_iter, evaluations, termination: Termination::MaxIterations }
}

/// Newton iterations on the gradient, with a Hessian from central differences
/// of the gradient, starting from a BFGS solution. Useful when the objective
/// is too flat in floating point for a line search to make progress but the
/// gradient is still informative. Steps are accepted only if they reduce the
/// projected gradient without increasing the objective beyond rounding.
pub fn newton_polish<F>(mut f: F, start: BfgsResult, lower: &[f64], upper: &[f64], gtol: f64, max_iter: usize) -> BfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut res = start;
    let n = res.x.len();
    let mut g_plus = vec![0.0; n];
    let mut g_minus = vec![0.0; n];
    for _ in 0..max_iter {
        let pg = projected_gradient(&res.x, &res.grad, lower, upper);
        if pg.amax() <= gtol {
            res.termination = Termination::Gradient;
            break;
        }
        let free: Vec<usize> = (0..n).filter(|&i| pg[i] != 0.0 || (res.x[i] > lower[i] && res.x[i] < upper[i])).collect();
        let k = free.len();
        let mut h = DMatrix::<f64>::zeros(k, k);
        let mut xp = res.x.clone();
        for (c, &j) in free.iter().enumerate() {
            let step = 1e-5 * res.x[j].abs().max(1.0);
            xp[j] = res.x[j] + step;
            let fp = f(&xp, &mut g_plus);
            xp[j] = res.x[j] - step;
            let fm = f(&xp, &mut g_minus);
            xp[j] = res.x[j];
            res.evaluations += 2;
            if !(fp.is_finite() && fm.is_finite()) {
                return res;
            }
            for (r, &i) in free.iter().enumerate() {
                h[(r, c)] = (g_plus[i] - g_minus[i]) / (2.0 * step);
            }
        }
        let h = (&h + h.transpose()) * 0.5;
        let Some(chol) = h.cholesky() else { return res };
        let rhs = DVector::from_iterator(k, free.iter().map(|&i| -res.grad[i]));
        let delta = chol.solve(&rhs);
        let mut x_new = res.x.clone();
        for (r, &i) in free.iter().enumerate() {
            x_new[i] += delta[r];
        }
        project(&mut x_new, lower, upper);
        let mut g_new = vec![0.0; n];
        let f_new = f(&x_new, &mut g_new);
        res.evaluations += 1;
        let pg_new = projected_gradient(&x_new, &g_new, lower, upper);
        if !(f_new.is_finite() && f_new <= res.f + 1e-12 * (1.0 + res.f.abs()) && pg_new.amax() < pg.amax()) {
            break;
        }
        res.x = x_new;
        res.grad = g_new;
        res.f = f_new;
        res.iterations += 1;
    }
    if projected_gradient(&res.x, &res.grad, lower, upper).amax() <= gtol {
        res.termination = Termination::Gradient;
    }
    res
}
