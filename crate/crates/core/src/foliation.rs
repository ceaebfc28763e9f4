//! Duration integrals of the regulating cycle and the leaves of constant
//! duration ratio `T_-/T_+ = r`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bifurcation::{homoclinic0_b2, hopf_b2, in_r1, surfaces_crossing_b1, RegionConfig};
use crate::integrator::{find_limit_cycle, CycleError, CycleOptions};
use crate::model::{NormalCubic, ReducedParams};
use crate::quadrature::{integrate, QuadError, QuadOptions, Refine};
use crate::roots::{bisect, RootError, MAX_BISECTION_ITERATIONS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FoliationError {
    #[error("denominator X + b1 g(X) + b2 vanishes on the branch (b1 = {b1}, b2 = {b2})")]
    SingularIntegrand { b1: f64, b2: f64 },
    #[error("ratio {0} is below 1")]
    RatioUnreachable(f64),
    #[error("ratio {r} not reached below the ceiling at b1 = {b1} (ratio there {at_ceiling})")]
    AboveCeiling { r: f64, b1: f64, at_ceiling: f64 },
    #[error("b1 = {b1} outside the leaf window [{lo}, {hi})")]
    WindowViolation { b1: f64, lo: f64, hi: f64 },
    #[error("refinement left the cycle region at b2 = {b2} (last good point b2 = {last_good:?}): {source}")]
    NoCycle { b2: f64, last_good: Option<f64>, source: CycleError },
    #[error("leaf refinement did not converge after {iterations} iterations (ratio {ratio}, target {target})")]
    NonConvergence { iterations: usize, ratio: f64, target: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error(transparent)]
    Root(#[from] RootError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeafOrder {
    ZeroOrder,
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafPoint {
    pub r: f64,
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
    pub achieved_ratio: f64,
    pub order: LeafOrder,
}

/// Sign of `X + b1 g(X) + b2` on `[a, b]`, or `None` if it changes or vanishes.
fn denominator_sign(b1: f64, b2: f64, mu: f64, a: f64, b: f64) -> Option<f64> {
    let g = NormalCubic::new(mu);
    let h = |x: f64| x + b1 * g.eval(x) + b2;
    let mut pts = vec![a, b];
    // h'(X) = 1 + 3 b1 (mu^2 - X^2)
    if b1 > 0.0 {
        let c = (mu * mu + 1.0 / (3.0 * b1)).sqrt();
        for x in [-c, c] {
            if x > a.min(b) && x < a.max(b) {
                pts.push(x);
            }
        }
    }
    let vals: Vec<f64> = pts.iter().map(|&x| h(x)).collect();
    if vals.iter().all(|&v| v < 0.0) {
        Some(-1.0)
    } else if vals.iter().all(|&v| v > 0.0) {
        Some(1.0)
    } else {
        None
    }
}

fn branch_integral(b1: f64, b2: f64, mu: f64, from: f64, to: f64, refine: Refine) -> Result<f64, FoliationError> {
    if denominator_sign(b1, b2, mu, from, to).is_none() {
        return Err(FoliationError::SingularIntegrand { b1, b2 });
    }
    let g = NormalCubic::new(mu);
    let opts = QuadOptions { rel_tol: 1e-10, abs_tol: 0.0, max_subdivisions: 5000, refine };
    let r = integrate(|x| g.deriv(x) / (x + b1 * g.eval(x) + b2), from, to, opts)?;
    Ok(r.value)
}

/// Zero-order duration of the left (pulsatile) branch, from `-2 mu` to `-mu`.
pub fn t0_minus(b1: f64, b2: f64, mu: f64) -> Result<f64, FoliationError> {
    if denominator_sign(b1, b2, mu, -2.0 * mu, -mu).is_none() {
        return Err(FoliationError::SingularIntegrand { b1, b2 });
    }
    // In s = X + 2 mu the denominator is (b2 - h_c0) + O(s), which keeps its
    // small constant term free of cancellation next to the homoclinic line.
    let gap = b2 - homoclinic0_b2(b1, mu);
    let mu2 = mu * mu;
    let (c1, c2, c3) = (1.0 - 9.0 * b1 * mu2, 6.0 * b1 * mu, -b1);
    let integrand = |s: f64| {
        let num = 3.0 * (-3.0 * mu2 + s * (4.0 * mu - s));
        let den = gap + s * (c1 + s * (c2 + s * c3));
        num / den
    };
    let opts = QuadOptions { rel_tol: 1e-10, abs_tol: 0.0, max_subdivisions: 5000, refine: Refine::Lower };
    Ok(integrate(integrand, 0.0, mu, opts)?.value)
}

/// Zero-order duration of the right (surge) branch, from `2 mu` to `mu`.
pub fn t0_plus(b1: f64, b2: f64, mu: f64) -> Result<f64, FoliationError> {
    branch_integral(b1, b2, mu, 2.0 * mu, mu, Refine::None)
}

pub fn t0_ratio(b1: f64, b2: f64, mu: f64) -> Result<f64, FoliationError> {
    Ok(t0_minus(b1, b2, mu)? / t0_plus(b1, b2, mu)?)
}

/// Ratio with the far side of the homoclinic line mapped to infinity;
/// quadrature failures become NaN, which stops any bisection using it.
fn ratio_or_infinite(b1: f64, b2: f64, mu: f64) -> f64 {
    match t0_ratio(b1, b2, mu) {
        Ok(v) => v,
        Err(FoliationError::SingularIntegrand { .. }) => f64::INFINITY,
        Err(_) => f64::NAN,
    }
}

/// Highest admissible `b2` at `b1`, kept `1e-9` inside the open region.
pub fn b2_ceiling(b1: f64, mu: f64, cfg: &RegionConfig) -> f64 {
    (hopf_b2(b1, mu) - cfg.alpha).min(homoclinic0_b2(b1, mu)) - 1e-9
}

/// Smallest `b1` whose zero-order leaf of ratio `r` stays below the
/// security plane: the ratio on the plane `b2 = h_p(b1) - alpha` equals `r`.
pub fn leaf_window_start(r: f64, mu: f64, cfg: &RegionConfig) -> Result<f64, FoliationError> {
    if r < 1.0 {
        return Err(FoliationError::RatioUnreachable(r));
    }
    let cross = surfaces_crossing_b1(mu, cfg.alpha);
    let on_plane = |b1: f64| -> f64 { ratio_or_infinite(b1, hopf_b2(b1, mu) - cfg.alpha, mu) - r };
    let lo = 1e-9;
    if on_plane(lo) >= 0.0 {
        return Ok(0.0);
    }
    let hi = cross * (1.0 - 1e-9);
    if on_plane(hi) < 0.0 {
        return Ok(cross);
    }
    Ok(bisect(on_plane, lo, hi, 1e-12, 0.0)?.root)
}

/// `b2 = l_r^0(b1)`: the zero-order leaf of ratio `r`.
pub fn leaf0_b2(r: f64, b1: f64, mu: f64, cfg: &RegionConfig) -> Result<f64, FoliationError> {
    if r < 1.0 {
        return Err(FoliationError::RatioUnreachable(r));
    }
    let hi_w = 1.0 / (mu * mu);
    let lo_w = leaf_window_start(r, mu, cfg)?;
    if !(b1 >= lo_w && b1 < hi_w) {
        return Err(FoliationError::WindowViolation { b1, lo: lo_w, hi: hi_w });
    }
    if r == 1.0 {
        return Ok(0.0);
    }
    let top = b2_ceiling(b1, mu, cfg);
    let f = |b2: f64| ratio_or_infinite(b1, b2, mu) - r;
    let at_top = f(top);
    if at_top < 0.0 {
        return Err(FoliationError::AboveCeiling { r, b1, at_ceiling: at_top + r });
    }
    Ok(bisect(f, 0.0, top, 1e-13, 0.0)?.root)
}

/// Zero-order leaf point with its achieved ratio.
pub fn leaf0_point(r: f64, b1: f64, mu: f64, cfg: &RegionConfig) -> Result<LeafPoint, FoliationError> {
    let b2 = leaf0_b2(r, b1, mu, cfg)?;
    Ok(LeafPoint { r, b1, b2, eps: 0.0, achieved_ratio: t0_ratio(b1, b2, mu)?, order: LeafOrder::ZeroOrder })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafOptions {
    /// Relative tolerance on the achieved ratio.
    pub ratio_tol: f64,
    pub cycle: CycleOptions,
}

impl Default for LeafOptions {
    fn default() -> Self {
        Self { ratio_tol: 1e-3, cycle: CycleOptions::default() }
    }
}

/// `T_-/T_+` of the simulated regulating cycle.
pub fn simulated_ratio(template: &ReducedParams, b1: f64, b2: f64, eps: f64, cycle: &CycleOptions) -> Result<f64, CycleError> {
    let c = find_limit_cycle(&template.with_regulator(b1, b2, eps), cycle)?;
    Ok(c.ratio())
}

/// `b2` on the leaf of ratio `r` at finite `eps`, measuring the ratio on the
/// simulated cycle. Starts from the zero-order leaf and runs a safeguarded
/// secant iteration in `b2`.
pub fn leaf_b2(
    template: &ReducedParams,
    r: f64,
    b1: f64,
    eps: f64,
    cfg: &RegionConfig,
    opts: &LeafOptions,
) -> Result<LeafPoint, FoliationError> {
    let mu = template.mu;
    let start = leaf0_b2(r, b1, mu, cfg)?;
    if !(eps > 0.0 && eps < cfg.eps0) {
        return Err(FoliationError::WindowViolation { b1, lo: 0.0, hi: cfg.eps0 });
    }
    let top = b2_ceiling(b1, mu, cfg);
    leaf_b2_from(template, r, b1, eps, start, 0.0, top, opts)
}

/// Safeguarded secant on `ratio(b2) = r` inside `[floor, ceiling]`, from `start`.
#[allow(clippy::too_many_arguments)]
pub fn leaf_b2_from(
    template: &ReducedParams,
    r: f64,
    b1: f64,
    eps: f64,
    start: f64,
    floor: f64,
    ceiling: f64,
    opts: &LeafOptions,
) -> Result<LeafPoint, FoliationError> {
    let measure = |b2: f64| simulated_ratio(template, b1, b2, eps, &opts.cycle);
    let done = |ratio: f64| (ratio - r).abs() <= opts.ratio_tol * r;
    let point = |b2: f64, ratio: f64| LeafPoint { r, b1, b2, eps, achieved_ratio: ratio, order: LeafOrder::Simulated };

    // (b2, ratio - r) with the sign convention ratio increasing in b2
    let mut lo: Option<(f64, f64)> = None;
    let mut hi: Option<(f64, f64)> = None;
    let mut last_good = None;
    let mut b2 = start.clamp(floor, ceiling);
    let mut prev: Option<(f64, f64)> = None;
    for it in 0..MAX_BISECTION_ITERATIONS {
        let f = match measure(b2) {
            Ok(ratio) => {
                last_good = Some(b2);
                if done(ratio) {
                    return Ok(point(b2, ratio));
                }
                ratio - r
            }
            // past the connection the cycle is gone: treat as overshoot
            Err(CycleError::NoCycle(_)) if b2 > floor => f64::INFINITY,
            Err(source) => return Err(FoliationError::NoCycle { b2, last_good, source }),
        };
        if f < 0.0 {
            lo = Some((b2, f));
        } else {
            hi = Some((b2, f));
        }
        let next = match (lo, hi) {
            (Some((a, fa)), Some((b, fb))) => {
                // secant when the last two values are finite and the step lands inside
                let guess = match prev {
                    Some((pb, pf)) if pf.is_finite() && f.is_finite() && pf != f => b2 - f * (b2 - pb) / (f - pf),
                    _ if fb.is_finite() => a - fa * (b - a) / (fb - fa),
                    _ => 0.5 * (a + b),
                };
                let margin = 0.02 * (b - a);
                if guess > a + margin && guess < b - margin {
                    guess
                } else {
                    0.5 * (a + b)
                }
            }
            (Some((a, _)), None) => {
                let step = (ceiling - a).max(0.0);
                if step <= 1e-12 {
                    return Err(FoliationError::NonConvergence { iterations: it, ratio: f + r, target: r });
                }
                a + 0.5 * step
            }
            (None, Some((b, _))) => {
                if b - floor <= 1e-12 {
                    return Err(FoliationError::NonConvergence { iterations: it, ratio: f + r, target: r });
                }
                b - 0.5 * (b - floor).min(0.1 + 0.5 * (b - floor))
            }
            (None, None) => unreachable!(),
        };
        if let (Some((a, _)), Some((b, _))) = (lo, hi) {
            if b - a < 1e-12 {
                return Err(FoliationError::NonConvergence { iterations: it, ratio: f + r, target: r });
            }
        }
        prev = Some((b2, f));
        b2 = next;
    }
    Err(FoliationError::NonConvergence { iterations: MAX_BISECTION_ITERATIONS, ratio: f64::NAN, target: r })
}

/// One row of a sampled leaf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafSample {
    pub b1: f64,
    pub b2_zero_order: f64,
    pub b2_simulated: Option<f64>,
    pub achieved_ratio: Option<f64>,
}

/// `n` values of `b1` in `[lo, hi)`, log-spaced toward `lo`.
pub fn leaf_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = hi - lo;
    let (a, b) = (1e-3f64.ln(), 0.98f64.ln());
    (0..n)
        .map(|k| {
            let s = if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 };
            lo + span * (a + (b - a) * s).exp()
        })
        .collect()
}

/// Samples the leaf of ratio `r` on the default 64-point grid; simulated
/// points are added when `eps` is given. Points where refinement fails keep
/// `None` in the simulated columns.
pub fn sample_leaf(
    template: &ReducedParams,
    r: f64,
    eps: Option<f64>,
    n: usize,
    cfg: &RegionConfig,
    opts: &LeafOptions,
) -> Result<Vec<LeafSample>, FoliationError> {
    let mu = template.mu;
    let lo = leaf_window_start(r, mu, cfg)?;
    let hi = 1.0 / (mu * mu);
    let mut out = Vec::with_capacity(n);
    for b1 in leaf_grid(lo, hi, n) {
        let b2_zero_order = match leaf0_b2(r, b1, mu, cfg) {
            Ok(v) => v,
            Err(FoliationError::WindowViolation { .. } | FoliationError::AboveCeiling { .. }) => continue,
            Err(e) => return Err(e),
        };
        let sim = eps.and_then(|e| leaf_b2(template, r, b1, e, cfg, opts).ok());
        out.push(LeafSample {
            b1,
            b2_zero_order,
            b2_simulated: sim.map(|p| p.b2),
            achieved_ratio: sim.map(|p| p.achieved_ratio),
        });
    }
    Ok(out)
}

/// True when a leaf point lies in the admissible region.
pub fn leaf_point_in_r1(p: &LeafPoint, mu: f64, cfg: &RegionConfig) -> bool {
    let eps = if p.order == LeafOrder::ZeroOrder { cfg.eps0 * 0.5 } else { p.eps };
    in_r1(p.b1, p.b2, eps, mu, cfg).inside
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_mu;

    fn mu() -> f64 {
        default_mu()
    }

    #[test]
    fn symmetric_split_at_zero_offset() {
        for b1 in [0.05, 0.246, 0.6] {
            let (m, p) = (t0_minus(b1, 0.0, mu()).unwrap(), t0_plus(b1, 0.0, mu()).unwrap());
            assert!(((m - p) / p).abs() < 1e-10, "{m} {p}");
            assert!(m > 0.0);
        }
    }

    #[test]
    fn reference_durations() {
        let m = t0_minus(0.246, 1.5103, mu()).unwrap();
        let p = t0_plus(0.246, 1.5103, mu()).unwrap();
        assert!((m - 21.34).abs() < 0.01 && (p - 1.786).abs() < 0.001, "{m} {p}");
    }

    #[test]
    fn durations_move_apart_with_b2() {
        let b1 = 0.3;
        let (mut last_m, mut last_p) = (0.0, f64::INFINITY);
        for k in 0..40 {
            let b2 = homoclinic0_b2(b1, mu()) * k as f64 / 40.0;
            let (m, p) = (t0_minus(b1, b2, mu()).unwrap(), t0_plus(b1, b2, mu()).unwrap());
            assert!(m > last_m && p < last_p);
            last_m = m;
            last_p = p;
        }
    }

    #[test]
    fn left_duration_diverges_at_homoclinic_line() {
        let b1 = 0.4;
        let hc = homoclinic0_b2(b1, mu());
        let near = t0_minus(b1, hc - 1e-8, mu()).unwrap();
        let far = t0_minus(b1, hc - 1e-4, mu()).unwrap();
        assert!(near > far + 5.0);
        assert!(t0_plus(b1, hc - 1e-8, mu()).unwrap() < 3.0);
        assert!(matches!(t0_minus(b1, hc + 1e-3, mu()), Err(FoliationError::SingularIntegrand { .. })));
    }

    #[test]
    fn leaf_basics() {
        let cfg = RegionConfig::default();
        assert_eq!(leaf0_b2(1.0, 0.4, mu(), &cfg).unwrap(), 0.0);
        assert!(matches!(leaf0_b2(0.5, 0.4, mu(), &cfg), Err(FoliationError::RatioUnreachable(_))));
        let b2 = leaf0_b2(6.0, 0.4, mu(), &cfg).unwrap();
        assert!((t0_ratio(0.4, b2, mu()).unwrap() - 6.0).abs() < 1e-6);
        let p = leaf0_point(9.0, 0.5, mu(), &cfg).unwrap();
        assert!(leaf_point_in_r1(&p, mu(), &cfg));
    }

    #[test]
    fn leaf_hugging_the_homoclinic_line_is_reported() {
        let r = leaf0_b2(1e3, 0.7, mu(), &RegionConfig::default());
        assert!(matches!(r, Err(FoliationError::AboveCeiling { .. })), "{r:?}");
    }

    #[test]
    fn ewe_point_is_near_its_leaf() {
        let b2 = leaf0_b2(15.5, 0.246, mu(), &RegionConfig::default()).unwrap();
        assert!((b2 - 1.5103).abs() < 0.05, "{b2}");
    }

    #[test]
    fn leaves_are_ordered() {
        let cfg = RegionConfig::default();
        for b1 in [0.25, 0.35, 0.5, 0.7] {
            let mut last = -1.0;
            let mut capped = false;
            for r in [1.5, 2.0, 3.0, 6.0, 9.0, 12.0, 20.0] {
                // near the right end of the window high leaves crowd within 1e-9 of the line
                let b2 = match leaf0_b2(r, b1, mu(), &cfg) {
                    Err(FoliationError::AboveCeiling { .. }) => {
                        capped = true;
                        continue;
                    }
                    other => other.unwrap(),
                };
                assert!(!capped && b2 > last);
                assert!(b2 < homoclinic0_b2(b1, mu()));
                last = b2;
            }
        }
    }

    #[test]
    fn window_start_solves_plane_equation() {
        let cfg = RegionConfig::default();
        let r = 12.0;
        let lo = leaf_window_start(r, mu(), &cfg).unwrap();
        assert!(lo > 0.0 && lo < surfaces_crossing_b1(mu(), cfg.alpha));
        let on_plane = t0_ratio(lo, hopf_b2(lo, mu()) - cfg.alpha, mu()).unwrap();
        assert!((on_plane - r).abs() < 1e-6 * r);
        assert!(matches!(leaf0_b2(r, lo * 0.9, mu(), &cfg), Err(FoliationError::WindowViolation { .. })));
        assert!(leaf0_b2(r, lo * 1.001, mu(), &cfg).is_ok());
    }

    #[test]
    fn grid_is_log_spaced_toward_left() {
        let g = leaf_grid(0.2, 0.75, 64);
        assert_eq!(g.len(), 64);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(g[1] - g[0] < g[63] - g[62]);
        assert!(g[0] > 0.2 && g[63] < 0.75);
    }

    #[test]
    fn simulated_leaf_point() {
        let p = ReducedParams::ewe();
        let cfg = RegionConfig::default();
        let pt = leaf_b2(&p, 6.0, 0.4, 0.02, &cfg, &LeafOptions::default()).unwrap();
        assert!((pt.achieved_ratio - 6.0).abs() <= 6e-3);
        assert!(leaf_point_in_r1(&pt, p.mu, &cfg));
        // tighter integration keeps the ratio within twice the tolerance
        let fine = CycleOptions { tol: 1e-9, ..CycleOptions::default() };
        let again = simulated_ratio(&p, pt.b1, pt.b2, pt.eps, &fine).unwrap();
        assert!((again - 6.0).abs() <= 12e-3);
    }
}
