//! Scalar root finding: closed-form cubic roots and bracketed bisection.

use thiserror::Error;

/// Iteration cap shared by every bisection in the crate.
pub const MAX_BISECTION_ITERATIONS: usize = 80;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RootError {
    #[error("root not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    NotBracketed { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("function is not a number at x = {at}")]
    NotANumber { at: f64 },
    #[error("bisection did not converge after {iterations} iterations (width {width})")]
    NonConvergence { iterations: usize, width: f64 },
}

/// Real roots of `a x^3 + b x^2 + c x + d = 0`, sorted ascending.
///
/// Degenerate leading coefficients fall back to the quadratic / linear
/// formulas. Each root gets one Newton polish step against the original
/// polynomial.
pub fn cubic_real_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs()).max(d.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    let mut roots = if a.abs() <= 1e-14 * scale {
        quadratic_real_roots(b, c, d)
    } else {
        depressed_cubic_roots(b / a, c / a, d / a)
    };
    for r in roots.iter_mut() {
        let p = ((a * *r + b) * *r + c) * *r + d;
        let dp = (3.0 * a * *r + 2.0 * b) * *r + c;
        if dp != 0.0 && dp.is_finite() {
            let step = p / dp;
            if step.is_finite() {
                *r -= step;
            }
        }
    }
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    roots
}

fn quadratic_real_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        if b == 0.0 {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    // numerically stable pair
    let q = -0.5 * (b + b.signum() * sq);
    if q == 0.0 {
        return vec![0.0, 0.0];
    }
    vec![q / a, c / q]
}

/// Roots of `x^3 + b x^2 + c x + d` (monic).
fn depressed_cubic_roots(b: f64, c: f64, d: f64) -> Vec<f64> {
    let shift = b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let tiny = 1e-14 * (1.0 + (q / 2.0).powi(2));
    if disc > tiny {
        // one real root (Cardano)
        let sq = disc.sqrt();
        let u = (-q / 2.0 + sq).cbrt();
        let v = (-q / 2.0 - sq).cbrt();
        vec![u + v - shift]
    } else if disc < -tiny {
        // three distinct real roots (trigonometric form)
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        (0..3)
            .map(|k| m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - shift)
            .collect()
    } else {
        // repeated root
        let u = (-q / 2.0).cbrt();
        if u == 0.0 {
            vec![-shift]
        } else {
            vec![2.0 * u - shift, -u - shift, -u - shift]
        }
    }
}

/// Outcome of a bracketed bisection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bisection {
    pub root: f64,
    pub iterations: usize,
    /// Final bracket width.
    pub width: f64,
}

/// Bisection on a sign change of `f` over `[lo, hi]`.
///
/// Stops once the bracket width falls below `rel_tol * max(|root|, 1)`
/// or `abs_tol`, whichever is larger. Fails after [`MAX_BISECTION_ITERATIONS`].
pub fn bisect<F>(mut f: F, lo: f64, hi: f64, rel_tol: f64, abs_tol: f64) -> Result<Bisection, RootError>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(Bisection { root: a, iterations: 0, width: 0.0 });
    }
    if fb == 0.0 {
        return Ok(Bisection { root: b, iterations: 0, width: 0.0 });
    }
    if !(fa.signum() != fb.signum()) || fa.is_nan() || fb.is_nan() {
        return Err(RootError::NotBracketed { lo, hi, f_lo: fa, f_hi: fb });
    }
    for it in 1..=MAX_BISECTION_ITERATIONS {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm.is_nan() {
            return Err(RootError::NotANumber { at: m });
        }
        if fm == 0.0 {
            return Ok(Bisection { root: m, iterations: it, width: 0.0 });
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
        let width = (b - a).abs();
        let mid = 0.5 * (a + b);
        if width <= (rel_tol * mid.abs().max(1.0)).max(abs_tol) {
            return Ok(Bisection { root: mid, iterations: it, width });
        }
    }
    Err(RootError::NonConvergence { iterations: MAX_BISECTION_ITERATIONS, width: (b - a).abs() })
}

/// Bisection on a boolean predicate: `pred(lo)` is true, `pred(hi)` is false;
/// returns the bracket `[last_true, first_false]` narrowed to `abs_tol`.
pub fn bisect_predicate<F>(mut pred: F, lo: f64, hi: f64, abs_tol: f64) -> Result<(f64, f64), RootError>
where
    F: FnMut(f64) -> bool,
{
    let (mut a, mut b) = (lo, hi);
    for _ in 0..MAX_BISECTION_ITERATIONS {
        if (b - a).abs() <= abs_tol {
            return Ok((a, b));
        }
        let m = 0.5 * (a + b);
        if pred(m) {
            a = m;
        } else {
            b = m;
        }
    }
    if (b - a).abs() <= abs_tol {
        Ok((a, b))
    } else {
        Err(RootError::NonConvergence { iterations: MAX_BISECTION_ITERATIONS, width: (b - a).abs() })
    }
}
