//! Bracketed scalar root finding.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RootError {
    #[error("f(a) and f(b) have the same sign: f({a}) = {fa}, f({b}) = {fb}")]
    NotBracketed { a: f64, b: f64, fa: f64, fb: f64 },
    #[error("function returned a non-finite value at {0}")]
    NonFinite(f64),
    #[error("no convergence after {0} iterations")]
    MaxIterations(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    pub xtol: f64,
    /// Stop once `|f(x)| <= ftol`.
    pub ftol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions { xtol: 1e-12, ftol: 0.0, max_iter: 200 }
    }
}

/// Brent's method on `[a, b]`. Returns the root and the function value there.
pub fn brent<F>(mut f: F, a: f64, b: f64, opts: RootOptions) -> Result<(f64, f64), RootError>
where
    F: FnMut(f64) -> Result<f64, RootError>,
{
    let fa = f(a)?;
    let fb = f(b)?;
    brent_with_values(f, a, fa, b, fb, opts)
}

/// [`brent`] when `f(a)` and `f(b)` are already known.
pub fn brent_with_values<F>(
    mut f: F,
    mut a: f64,
    mut fa: f64,
    mut b: f64,
    mut fb: f64,
    opts: RootOptions,
) -> Result<(f64, f64), RootError>
where
    F: FnMut(f64) -> Result<f64, RootError>,
{
    if !fa.is_finite() {
        return Err(RootError::NonFinite(a));
    }
    if !fb.is_finite() {
        return Err(RootError::NonFinite(b));
    }
    if fa == 0.0 {
        return Ok((a, fa));
    }
    if fb == 0.0 {
        return Ok((b, fb));
    }
    if fa.signum() == fb.signum() {
        return Err(RootError::NotBracketed { a, b, fa, fb });
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..opts.max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * opts.xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 || fb.abs() <= opts.ftol {
            return Ok((b, fb));
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
        if !fb.is_finite() {
            return Err(RootError::NonFinite(b));
        }
    }
    Err(RootError::MaxIterations(opts.max_iter))
}

/// Safeguarded Newton on a decreasing function with a known bracket
/// `lo < root < hi`, `f(lo) > 0 > f(hi)` (endpoints may be poles).
/// `fdf` returns `(f, f')`.
pub fn newton_decreasing<F>(
    mut fdf: F,
    mut lo: f64,
    mut hi: f64,
    x0: f64,
    ftol: f64,
    max_iter: usize,
) -> Result<(f64, f64), RootError>
where
    F: FnMut(f64) -> (f64, f64),
{
    let mut x = x0.clamp(lo, hi);
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }
    let mut best = (x, f64::INFINITY);
    for _ in 0..max_iter {
        let (fx, dfx) = fdf(x);
        if !fx.is_finite() {
            return Err(RootError::NonFinite(x));
        }
        if fx.abs() < best.1.abs() {
            best = (x, fx);
        }
        if fx.abs() <= ftol {
            return Ok((x, fx));
        }
        if fx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - fx / dfx;
        let next = if dfx < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == x || hi - lo <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
            return Ok(best);
        }
        x = next;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn brent_cubic() {
        let (x, _) = brent(|x| Ok(x * x * x - 2.0 * x - 5.0), 2.0, 3.0, RootOptions::default()).unwrap();
        assert_abs_diff_eq!(x, 2.0945514815423265, epsilon = 1e-12);
    }

    #[test]
    fn brent_rejects_unbracketed() {
        assert!(matches!(
            brent(|x| Ok(x * x + 1.0), -1.0, 1.0, RootOptions::default()),
            Err(RootError::NotBracketed { .. })
        ));
    }

    #[test]
    fn newton_with_poles() {
        // 1/x - 2 on (0, inf) truncated to (0, 10).
        let (x, fx) = newton_decreasing(|x| (1.0 / x - 2.0, -1.0 / (x * x)), 0.0, 10.0, 5.0, 1e-14, 200).unwrap();
        assert_abs_diff_eq!(x, 0.5, epsilon = 1e-14);
        assert!(fx.abs() <= 1e-14);
    }
}
