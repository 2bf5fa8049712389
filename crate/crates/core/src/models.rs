//! Conditional capture-count distributions and inclusion probabilities.
//!
//! Every pmf is evaluated in log space and exponentiated last. All sums
//! over capture counts are driven by a linear predictor `t = beta'z`, which
//! keeps the derivatives with respect to `beta` a scalar multiple of `z`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::data::{CaptureModelSpec, Family};
use crate::missingness::Missingness;

/// Tail mass left out of truncated Poisson sums.
pub const POISSON_TAIL_TOL: f64 = 1e-14;

/// Beyond this intensity a Poisson sum is collapsed onto its mean.
const MAX_POISSON_LAMBDA: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("f(0) = 1 to machine precision; the capture distribution has no positive support")]
    DegenerateSupport,
    #[error("one-inflation parameter must lie in (0, 1], got {0}")]
    InvalidOmega(f64),
}

/// One-inflation parameter; `1` means no inflation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneInflation(f64);

impl OneInflation {
    pub const NONE: OneInflation = OneInflation(1.0);

    pub fn new(omega: f64) -> Result<Self, ModelError> {
        if omega > 0.0 && omega <= 1.0 {
            Ok(OneInflation(omega))
        } else {
            Err(ModelError::InvalidOmega(omega))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationBounds {
    pub k_min: u64,
    pub k_max: u64,
}

#[inline]
pub fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `log(logistic(v))` without overflow.
#[inline]
pub fn log_logistic(v: f64) -> f64 {
    -softplus(-v)
}

#[inline]
fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

const LN_FACT_TABLE: usize = 4096;

fn ln_fact_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        // Exact products while k! is representable, log-gamma beyond.
        let mut fact = 1.0f64;
        (0..LN_FACT_TABLE)
            .map(|k| {
                if k <= 170 {
                    if k > 0 {
                        fact *= k as f64;
                    }
                    fact.ln()
                } else {
                    ln_gamma(k as f64 + 1.0)
                }
            })
            .collect()
    })
}

#[inline]
pub fn ln_factorial(k: u64) -> f64 {
    if (k as usize) < LN_FACT_TABLE {
        ln_fact_table()[k as usize]
    } else {
        ln_gamma(k as f64 + 1.0)
    }
}

#[inline]
pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k == 0 || k == n {
        return 0.0;
    }
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Log pmf of the capture count given the linear predictor `t`.
#[inline]
pub fn ln_pmf(k: u64, t: f64, family: Family) -> f64 {
    match family {
        Family::Binomial { occasions } => {
            let kk = occasions as u64;
            if k > kk {
                return f64::NEG_INFINITY;
            }
            ln_choose(kk, k) + k as f64 * log_logistic(t) + (kk - k) as f64 * log_logistic(-t)
        }
        Family::Poisson => {
            let lambda = t.exp();
            if k == 0 {
                -lambda
            } else {
                k as f64 * t - lambda - ln_factorial(k)
            }
        }
    }
}

fn linear_predictor(z: &[f64], beta: &[f64]) -> f64 {
    debug_assert_eq!(z.len(), beta.len());
    z.iter().zip(beta).map(|(a, b)| a * b).sum()
}

/// `f(k, z; beta)`.
pub fn f(k: u64, z: &[f64], beta: &[f64], spec: &CaptureModelSpec) -> f64 {
    ln_pmf(k, linear_predictor(z, beta), spec.family).exp().min(1.0)
}

/// One-inflated pmf `h(k, z; beta, omega)`.
pub fn h(k: u64, z: &[f64], beta: &[f64], omega: OneInflation, spec: &CaptureModelSpec) -> f64 {
    let w = omega.value();
    match k {
        0 => f(0, z, beta, spec),
        1 => {
            let t = linear_predictor(z, beta);
            (1.0 - w) * survival(t, spec.family) + w * ln_pmf(1, t, spec.family).exp()
        }
        _ => w * f(k, z, beta, spec),
    }
}

/// `1 - f(0)` computed without cancellation.
#[inline]
pub fn survival(t: f64, family: Family) -> f64 {
    match family {
        Family::Binomial { occasions } => -(occasions as f64 * log_logistic(-t)).exp_m1(),
        Family::Poisson => -(-t.exp()).exp_m1(),
    }
}

/// Conditional mean of the count given `t`.
#[inline]
pub fn mean_count(t: f64, family: Family) -> f64 {
    match family {
        Family::Binomial { occasions } => occasions as f64 * logistic(t),
        Family::Poisson => t.exp(),
    }
}

/// Conditional variance of `D` given `z`.
pub fn v_f(z: &[f64], beta: &[f64], spec: &CaptureModelSpec) -> f64 {
    let t = linear_predictor(z, beta);
    match spec.family {
        Family::Binomial { occasions } => {
            let g = logistic(t);
            occasions as f64 * g * (1.0 - g)
        }
        Family::Poisson => t.exp(),
    }
}

/// `P(D = k | Z = z, D > 0)` under the one-inflated model.
pub fn cond_prob_given_captured(
    k: u64,
    z: &[f64],
    beta: &[f64],
    omega: OneInflation,
    spec: &CaptureModelSpec,
) -> Result<f64, ModelError> {
    let t = linear_predictor(z, beta);
    let surv = survival(t, spec.family);
    if surv <= f64::EPSILON * 0.5 {
        return Err(ModelError::DegenerateSupport);
    }
    let w = omega.value();
    let fk = ln_pmf(k, t, spec.family).exp();
    Ok(match k {
        0 => 0.0,
        1 => (1.0 - w) + w * fk / surv,
        _ => w * fk / surv,
    })
}

/// Summation window suggested for Poisson sums with intensity `lambda`.
pub fn truncation_bounds(lambda: f64) -> TruncationBounds {
    if lambda <= 16.0 {
        TruncationBounds { k_min: 1, k_max: 30 }
    } else {
        let spread = 5.0 * lambda.sqrt();
        TruncationBounds {
            k_min: ((lambda - spread).floor().max(1.0)) as u64,
            k_max: (lambda + spread).ceil() as u64,
        }
    }
}

/// [`truncation_bounds`] widened until each omitted tail of the zero-truncated
/// Poisson mass is below `tol`.
pub fn covering_bounds(lambda: f64, tol: f64) -> TruncationBounds {
    let mut b = truncation_bounds(lambda);
    let t = lambda.ln();
    let ln_tol = tol.ln();
    // Upper tail: P(X > k) <= f(k + 1) / (1 - lambda / (k + 2)).
    loop {
        let next = b.k_max + 1;
        let ratio = lambda / (next + 1) as f64;
        if ratio < 1.0 && ln_pmf(next, t, Family::Poisson) - (1.0 - ratio).ln() < ln_tol {
            break;
        }
        b.k_max += 1 + b.k_max / 16;
    }
    // Lower tail: P(1 <= X < k) <= f(k - 1) / (1 - (k - 1) / lambda).
    while b.k_min > 1 {
        let prev = b.k_min - 1;
        let ratio = prev as f64 / lambda;
        if ratio < 1.0 && ln_pmf(prev, t, Family::Poisson) - (1.0 - ratio).ln() < ln_tol {
            break;
        }
        b.k_min = prev.saturating_sub(prev / 16).max(1);
    }
    b
}

/// Sums over `k >= 1` needed by the inclusion probabilities and their
/// derivatives, for one individual.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct InclusionSums {
    /// `sum_k pi_k f_k`, i.e. `phi`.
    pub s0: f64,
    /// `sum_k k pi_k f_k`.
    pub s1: f64,
    pub mu: f64,
    pub f0: f64,
    /// `1 - f0`.
    pub surv: f64,
}

impl InclusionSums {
    pub fn compute(t: f64, family: Family, pi: impl Fn(u64) -> f64) -> Self {
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        let (k_min, k_max) = match family {
            Family::Binomial { occasions } => (1, occasions as u64),
            Family::Poisson => {
                let lambda = t.exp();
                if lambda > MAX_POISSON_LAMBDA {
                    let k = lambda.round().max(1.0) as u64;
                    let surv = survival(t, family);
                    let p = pi(k) * surv;
                    return InclusionSums {
                        s0: p,
                        s1: p * lambda,
                        mu: lambda,
                        f0: 1.0 - surv,
                        surv,
                    };
                }
                let b = covering_bounds(lambda, POISSON_TAIL_TOL);
                (b.k_min, b.k_max)
            }
        };
        match family {
            Family::Binomial { occasions } => {
                let kk = occasions as u64;
                let (lp, lq) = (log_logistic(t), log_logistic(-t));
                for k in k_min..=k_max {
                    let term = pi(k) * (ln_choose(kk, k) + k as f64 * lp + (kk - k) as f64 * lq).exp();
                    s0 += term;
                    s1 += k as f64 * term;
                }
            }
            Family::Poisson => {
                let lambda = t.exp();
                for k in k_min..=k_max {
                    let term = pi(k) * (k as f64 * t - lambda - ln_factorial(k)).exp();
                    s0 += term;
                    s1 += k as f64 * term;
                }
            }
        }
        InclusionSums {
            s0,
            s1,
            mu: mean_count(t, family),
            f0: ln_pmf(0, t, family).exp(),
            surv: survival(t, family),
        }
    }

    /// `phi_e` and its derivatives with respect to `t` and `omega`.
    /// With `omega = 1` this is `phi`.
    #[inline]
    pub fn phi_e(&self, omega: f64, pi1: f64) -> (f64, f64, f64) {
        let dphi_dt = self.s1 - self.mu * self.s0;
        if omega == 1.0 {
            return (self.s0, dphi_dt, self.s0 - self.surv * pi1);
        }
        let value = (1.0 - omega) * self.surv * pi1 + omega * self.s0;
        let dt = (1.0 - omega) * pi1 * self.mu * self.f0 + omega * dphi_dt;
        let domega = self.s0 - self.surv * pi1;
        (value, dt, domega)
    }
}

/// `phi(z; beta, eta) = sum_{k>=1} pi(x, k) f(k, z; beta)`.
pub fn phi(z: &[f64], beta: &[f64], missingness: &Missingness, spec: &CaptureModelSpec) -> f64 {
    phi_e(z, beta, OneInflation::NONE, missingness, spec)
}

/// `phi` with the one-inflated pmf `h` in place of `f`.
pub fn phi_e(
    z: &[f64],
    beta: &[f64],
    omega: OneInflation,
    missingness: &Missingness,
    spec: &CaptureModelSpec,
) -> f64 {
    let x = &z[1..1 + spec.dim_x];
    let t = linear_predictor(z, beta);
    let sums = InclusionSums::compute(t, spec.family, |k| missingness.pi(x, k));
    sums.phi_e(omega.value(), missingness.pi(x, 1)).0
}

/// `log h(d)` and its derivatives with respect to `t` and `omega`.
#[inline]
pub(crate) fn ln_h_with_grad(d: u64, t: f64, omega: f64, family: Family) -> (f64, f64, f64) {
    let mu = mean_count(t, family);
    if d != 1 {
        let v = ln_pmf(d, t, family) + omega.ln();
        return (v, d as f64 - mu, 1.0 / omega);
    }
    let f0 = ln_pmf(0, t, family).exp();
    let f1 = ln_pmf(1, t, family).exp();
    let surv = survival(t, family);
    let h1 = (1.0 - omega) * surv + omega * f1;
    let dt = ((1.0 - omega) * mu * f0 + omega * f1 * (1.0 - mu)) / h1;
    (h1.ln(), dt, (f1 - surv) / h1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn binom17() -> CaptureModelSpec {
        CaptureModelSpec::binomial(17, 2, 1)
    }

    fn pois() -> CaptureModelSpec {
        CaptureModelSpec::poisson(2, 1)
    }

    const Z: [f64; 4] = [1.0, 0.0, 1.0, 0.5];
    const BETA_A: [f64; 4] = [-1.5, -0.3, -1.2, 0.5];
    const ETA_A: [f64; 4] = [-0.3, 0.5, 0.5, 0.5];

    #[test]
    fn binomial_at_zero_beta() {
        let f0 = f(0, &Z, &[0.0; 4], &binom17());
        assert_abs_diff_eq!(f0, 0.5f64.powi(17), epsilon = 1e-18);
        assert_abs_diff_eq!(f0, 7.6294e-6, epsilon = 1e-9);
    }

    #[test]
    fn pmfs_normalize() {
        for beta in [[0.0; 4], BETA_A, [3.0, 1.0, -2.0, 4.0]] {
            let s: f64 = (0..=17).map(|k| f(k, &Z, &beta, &binom17())).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
            for w in [1.0, 0.7, 0.2] {
                let om = OneInflation::new(w).unwrap();
                let s: f64 = (0..=17).map(|k| h(k, &Z, &beta, om, &binom17())).sum();
                assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
                let s: f64 = (0..=400).map(|k| h(k, &Z, &beta, om, &pois())).sum();
                assert_abs_diff_eq!(s, 1.0, epsilon = 1e-10);
            }
        }
        assert_eq!(f(18, &Z, &BETA_A, &binom17()), 0.0);
    }

    #[test]
    fn poisson_unit_rate() {
        let z = [1.0, 0.0, 0.0, 0.0];
        assert_abs_diff_eq!(f(1, &z, &[0.0; 4], &pois()), (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(v_f(&z, &[0.0; 4], &pois()), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn no_inflation_and_inflated_one() {
        let om = OneInflation::new(1.0).unwrap();
        for k in 0..=17 {
            assert_eq!(h(k, &Z, &BETA_A, om, &binom17()), f(k, &Z, &BETA_A, &binom17()));
        }
        // f(0) = 0.2, f(1) = 0.3, omega = 0.5
        let (f0, f1, w) = (0.2, 0.3, 0.5);
        assert_abs_diff_eq!((1.0 - w) * (1.0 - f0) + w * f1, 0.55, epsilon = 1e-15);
        assert!(OneInflation::new(0.0).is_err());
        assert!(OneInflation::new(1.2).is_err());
    }

    #[test]
    fn phi_matches_direct_sum() {
        let m = Missingness::Logistic(ETA_A.to_vec());
        let direct: f64 = (1..=17)
            .map(|k| m.pi(&Z[1..3], k) * f(k, &Z, &BETA_A, &binom17()))
            .sum();
        assert_abs_diff_eq!(phi(&Z, &BETA_A, &m, &binom17()), direct, epsilon = 1e-12);
    }

    #[test]
    fn phi_with_certain_observation_is_capture_probability() {
        let m = Missingness::Logistic(vec![50.0, 0.0, 0.0, 0.0]);
        let p = phi(&Z, &BETA_A, &m, &binom17());
        assert_abs_diff_eq!(p, 1.0 - f(0, &Z, &BETA_A, &binom17()), epsilon = 1e-10);
        let p = phi(&Z, &BETA_A, &Missingness::AlwaysObserved, &binom17());
        assert_abs_diff_eq!(p, 1.0 - f(0, &Z, &BETA_A, &binom17()), epsilon = 1e-14);
    }

    #[test]
    fn truncation_rule() {
        assert_eq!(truncation_bounds(16.0), TruncationBounds { k_min: 1, k_max: 30 });
        assert_eq!(truncation_bounds(25.0), TruncationBounds { k_min: 1, k_max: 50 });
        assert_eq!(truncation_bounds(100.0), TruncationBounds { k_min: 50, k_max: 150 });
        assert_eq!(truncation_bounds(0.3), TruncationBounds { k_min: 1, k_max: 30 });
    }

    #[test]
    fn covering_bounds_contain_rule() {
        for lambda in [0.1, 1.0, 16.0, 20.0, 100.0, 200.0] {
            let rule = truncation_bounds(lambda);
            let b = covering_bounds(lambda, 1e-14);
            assert!(b.k_min <= rule.k_min && b.k_max >= rule.k_max);
        }
    }

    #[test]
    fn binomial_variance_matches_moments() {
        let t: f64 = Z.iter().zip(BETA_A).map(|(a, b)| a * b).sum();
        let g = logistic(t);
        let brute: f64 = (0..=17)
            .map(|k| (k as f64 - 17.0 * g).powi(2) * f(k, &Z, &BETA_A, &binom17()))
            .sum();
        assert_abs_diff_eq!(v_f(&Z, &BETA_A, &binom17()), brute, epsilon = 1e-10);
        assert_abs_diff_eq!(v_f(&Z, &[0.0; 4], &binom17()), 4.25, epsilon = 1e-15);
    }

    #[test]
    fn conditional_given_capture() {
        let spec = binom17();
        let om = OneInflation::new(1.0).unwrap();
        let f0 = f(0, &Z, &BETA_A, &spec);
        for k in 1..=17 {
            let c = cond_prob_given_captured(k, &Z, &BETA_A, om, &spec).unwrap();
            assert_abs_diff_eq!(c, f(k, &Z, &BETA_A, &spec) / (1.0 - f0), epsilon = 1e-14);
        }
        for w in [0.9, 0.4] {
            let om = OneInflation::new(w).unwrap();
            let s: f64 = (1..=17)
                .map(|k| cond_prob_given_captured(k, &Z, &BETA_A, om, &spec).unwrap())
                .sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-10);
        }
        // omega -> 0 approaches a point mass at one.
        let om = OneInflation::new(1e-300).unwrap();
        assert_abs_diff_eq!(cond_prob_given_captured(1, &Z, &BETA_A, om, &spec).unwrap(), 1.0, epsilon = 1e-12);
        let dead = [-800.0, 0.0, 0.0, 0.0];
        assert_eq!(
            cond_prob_given_captured(1, &Z, &dead, om, &pois()),
            Err(ModelError::DegenerateSupport)
        );
    }

    #[test]
    fn log_space_is_safe() {
        for t in [-700.0, -300.0, 0.0, 300.0, 700.0] {
            let z = [1.0, 0.0, 0.0, 0.0];
            let beta = [t, 0.0, 0.0, 0.0];
            for k in [0, 1, 5, 17] {
                for spec in [binom17(), pois()] {
                    let v = f(k, &z, &beta, &spec);
                    assert!(v.is_finite() && (0.0..=1.0).contains(&v), "t={t} k={k} v={v}");
                }
            }
        }
    }

    #[test]
    fn ln_h_derivatives_match_finite_differences() {
        for family in [Family::Binomial { occasions: 17 }, Family::Poisson] {
            for &(d, t, w) in &[(1u64, -0.4, 0.6), (1, 0.3, 1.0), (3, -1.0, 0.8), (2, 0.2, 1.0)] {
                let (_, dt, dw) = ln_h_with_grad(d, t, w, family);
                let e = 1e-6;
                let num_t = (ln_h_with_grad(d, t + e, w, family).0 - ln_h_with_grad(d, t - e, w, family).0) / (2.0 * e);
                assert_abs_diff_eq!(dt, num_t, epsilon = 1e-7);
                if w < 1.0 {
                    let num_w = (ln_h_with_grad(d, t, w + e, family).0 - ln_h_with_grad(d, t, w - e, family).0) / (2.0 * e);
                    assert_abs_diff_eq!(dw, num_w, epsilon = 1e-7);
                }
            }
        }
    }
}
