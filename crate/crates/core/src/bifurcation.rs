//! Hopf and homoclinic surfaces of the regulating system and the admissible
//! region below both.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::{find_limit_cycle, CycleError, CycleOptions, LimitCycleSummary};
use crate::model::{middle_equilibrium, ReducedParams};
use crate::roots::MAX_BISECTION_ITERATIONS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionConfig {
    /// Security margin below the Hopf surface.
    pub alpha: f64,
    /// Largest admissible `epsilon`.
    pub eps0: f64,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self { alpha: 0.1, eps0: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegionError {
    #[error("alpha = {alpha} must lie in (0, mu = {mu}) for the region to be non-empty")]
    Alpha { alpha: f64, mu: f64 },
    #[error("eps0 = {0} must be positive")]
    Eps0(f64),
}

impl RegionConfig {
    pub fn validate(&self, mu: f64) -> Result<(), RegionError> {
        // at b1 = 0 the region reaches up to b2 = mu - alpha
        if !(self.alpha > 0.0 && self.alpha < mu) {
            return Err(RegionError::Alpha { alpha: self.alpha, mu });
        }
        if !(self.eps0 > 0.0) {
            return Err(RegionError::Eps0(self.eps0));
        }
        Ok(())
    }
}

/// `b2` on the Hopf surface: the middle equilibrium sits on the fold `X = -mu`.
pub fn hopf_b2(b1: f64, mu: f64) -> f64 {
    mu + 2.0 * b1 * mu.powi(3)
}

/// `b2` on the zero-order homoclinic surface: the nullcline passes through `(-2 mu, 2 mu^3)`.
pub fn homoclinic0_b2(b1: f64, mu: f64) -> f64 {
    2.0 * mu - 2.0 * b1 * mu.powi(3)
}

/// Crossing of the two surfaces with the Hopf one shifted down by `alpha`.
pub fn surfaces_crossing_b1(mu: f64, alpha: f64) -> f64 {
    (mu + alpha) / (4.0 * mu.powi(3))
}

/// Interval of `b1` on which the homoclinic surface lies below the security plane.
pub fn secub1_window(mu: f64, alpha: f64) -> (f64, f64) {
    (surfaces_crossing_b1(mu, alpha), 1.0 / (mu * mu))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum R1Violation {
    HopfMargin,
    Homoclinic,
    EpsilonTooLarge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R1Membership {
    pub inside: bool,
    pub violations: Vec<R1Violation>,
    pub hopf_margin: f64,
    pub homoclinic_margin: f64,
}

/// Membership in the region below the homoclinic surface, below the Hopf
/// surface by at least `alpha`, with `epsilon < eps0`.
///
/// The homoclinic clause uses the zero-order surface; the
/// `epsilon`-corrected one lies below it by `O(epsilon^{2/3})` and is
/// available from [`homoclinic_b2_numeric`].
pub fn in_r1(b1: f64, b2: f64, eps: f64, mu: f64, cfg: &RegionConfig) -> R1Membership {
    let hopf_margin = hopf_b2(b1, mu) - cfg.alpha - b2;
    let homoclinic_margin = homoclinic0_b2(b1, mu) - b2;
    let mut violations = Vec::new();
    if !(hopf_margin > 0.0) {
        violations.push(R1Violation::HopfMargin);
    }
    if !(homoclinic_margin > 0.0) {
        violations.push(R1Violation::Homoclinic);
    }
    if !(eps < cfg.eps0 && eps > 0.0) {
        violations.push(R1Violation::EpsilonTooLarge);
    }
    R1Membership { inside: violations.is_empty(), violations, hopf_margin, homoclinic_margin }
}

/// [`in_r1`] for a parameter set.
pub fn params_in_r1(p: &ReducedParams, cfg: &RegionConfig) -> R1Membership {
    in_r1(p.b1, p.b2, p.epsilon, p.mu, cfg)
}

/// Trace of the regulating-system Jacobian at the middle equilibrium.
pub fn middle_trace(p: &ReducedParams) -> Option<f64> {
    middle_equilibrium(p).map(|e| e.trace)
}

/// [`find_limit_cycle`] guarded by the region check.
pub fn find_limit_cycle_in_r1(p: &ReducedParams, cfg: &RegionConfig, opts: &CycleOptions) -> Result<LimitCycleSummary, CycleError> {
    let m = params_in_r1(p, cfg);
    if !m.inside {
        return Err(CycleError::NoCycle(format!("parameters outside the admissible region: {:?}", m.violations)));
    }
    find_limit_cycle(p, opts)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HomoclinicError {
    #[error("b1 = {b1} outside the window ({lo}, {hi})")]
    WindowViolation { b1: f64, lo: f64, hi: f64 },
    #[error("no limit cycle at the lower bracket b2 = {b2}: {source}")]
    NoCycle { b2: f64, source: CycleError },
    #[error("no bracket found up to b2 = {0}")]
    NoBracket(f64),
    #[error("bisection did not reach width {tol} in {iterations} iterations")]
    NonConvergence { iterations: usize, tol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomoclinicPoint {
    pub b1: f64,
    pub eps: f64,
    pub b2: f64,
    /// Last `b2` with a cycle and first without.
    pub bracket: (f64, f64),
    /// `X_min + b1 g(X_min) + b2` on the last cycle.
    pub gap: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomoclinicOptions {
    pub b2_tol: f64,
    pub cycle: CycleOptions,
}

impl Default for HomoclinicOptions {
    fn default() -> Self {
        Self { b2_tol: 1e-6, cycle: CycleOptions::default() }
    }
}

/// `b2` of the homoclinic connection at finite `eps`, by bisection on the
/// existence of a cycle whose left excursion stays short of the saddle.
pub fn homoclinic_b2_numeric(
    template: &ReducedParams,
    b1: f64,
    eps: f64,
    cfg: &RegionConfig,
    opts: &HomoclinicOptions,
) -> Result<HomoclinicPoint, HomoclinicError> {
    let mu = template.mu;
    let (lo_w, hi_w) = secub1_window(mu, cfg.alpha);
    if !(b1 > lo_w && b1 < hi_w) {
        return Err(HomoclinicError::WindowViolation { b1, lo: lo_w, hi: hi_w });
    }
    let hc0 = homoclinic0_b2(b1, mu);
    let probe = |b2: f64| -> Result<f64, CycleError> {
        let p = template.with_regulator(b1, b2, eps);
        let c = find_limit_cycle(&p, &opts.cycle)?;
        Ok(c.x_min + b1 * p.g().eval(c.x_min) + b2)
    };

    let mut lo = 0.5 * hc0;
    let mut gap = probe(lo).map_err(|source| HomoclinicError::NoCycle { b2: lo, source })?;
    if gap >= 0.0 {
        return Err(HomoclinicError::NoCycle { b2: lo, source: CycleError::NoCycle("cycle already reaches the saddle".into()) });
    }
    // geometric approach toward a point a little past the zero-order surface
    let top = hc0 + 0.05;
    let mut hi = None;
    for k in 1..=40 {
        let b2 = top - (top - 0.5 * hc0) * 0.5f64.powi(k);
        match probe(b2) {
            Ok(u) if u < 0.0 => {
                lo = b2;
                gap = u;
            }
            _ => {
                hi = Some(b2);
                break;
            }
        }
    }
    let mut hi = hi.ok_or(HomoclinicError::NoBracket(top))?;
    let mut iterations = 0;
    while hi - lo > opts.b2_tol {
        if iterations >= MAX_BISECTION_ITERATIONS {
            return Err(HomoclinicError::NonConvergence { iterations, tol: opts.b2_tol });
        }
        let mid = 0.5 * (lo + hi);
        match probe(mid) {
            Ok(u) if u < 0.0 => {
                lo = mid;
                gap = u;
            }
            _ => hi = mid,
        }
        iterations += 1;
    }
    Ok(HomoclinicPoint { b1, eps, b2: 0.5 * (lo + hi), bracket: (lo, hi), gap, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_mu, regulator_equilibria, BranchPosition};

    const MU: f64 = 1.1547005383792515;

    #[test]
    fn closed_forms() {
        assert!((default_mu() - MU).abs() < 1e-15);
        assert!((hopf_b2(0.0, MU) - 1.1547005383792515).abs() < 1e-15);
        assert!((hopf_b2(0.246, MU) - 1.9122).abs() < 1e-4);
        assert!((homoclinic0_b2(0.246, MU) - 1.5519).abs() < 1e-4);
        assert!((homoclinic0_b2(0.187, MU) - 1.7336).abs() < 1e-4);
        assert!(1.5103 < homoclinic0_b2(0.246, MU));
        assert!(1.704 < homoclinic0_b2(0.187, MU));
        let b1 = surfaces_crossing_b1(MU, 0.0);
        assert!((hopf_b2(b1, MU) - homoclinic0_b2(b1, MU)).abs() < 1e-14);
        let (lo, hi) = secub1_window(MU, 0.1);
        assert!((lo - 0.2037).abs() < 1e-4 && (hi - 0.75).abs() < 1e-12);
    }

    #[test]
    fn hopf_value_places_middle_root_on_fold() {
        for b1 in [0.05, 0.246, 0.6] {
            let p = ReducedParams::ewe().with_regulator(b1, hopf_b2(b1, MU), 0.02);
            let eq = regulator_equilibria(&p);
            assert!(eq.iter().any(|e| (e.x + MU).abs() < 1e-9 && e.position == BranchPosition::Degenerate));
        }
    }

    #[test]
    fn region_examples() {
        let cfg = RegionConfig::default();
        let m = in_r1(0.246, 1.5103, 0.02, MU, &cfg);
        assert!(m.inside, "{m:?}");
        assert!((m.hopf_margin - (1.8122 - 1.5103)).abs() < 1e-3);
        let m = in_r1(0.3, hopf_b2(0.3, MU), 0.02, MU, &cfg);
        assert!(m.violations.contains(&R1Violation::HopfMargin));
        let m = in_r1(0.246, 1.56, 0.001, MU, &cfg);
        assert_eq!(m.violations, vec![R1Violation::Homoclinic]);
        let m = in_r1(0.246, 1.0, 0.2, MU, &cfg);
        assert_eq!(m.violations, vec![R1Violation::EpsilonTooLarge]);
        assert!(cfg.validate(MU).is_ok());
        assert!(RegionConfig { alpha: 2.0, ..cfg }.validate(MU).is_err());
    }

    #[test]
    fn trace_changes_sign_across_hopf() {
        // tiny eps keeps the eps*b1 trace offset below the probe distance
        for b1 in [0.01, 0.2, 0.45, 0.7] {
            let hp = hopf_b2(b1, MU);
            let p = ReducedParams::ewe();
            let below = middle_trace(&p.with_regulator(b1, hp - 1e-3, 1e-8)).unwrap();
            let above = middle_trace(&p.with_regulator(b1, hp + 1e-3, 1e-8)).unwrap();
            assert!(below > 0.0 && above < 0.0, "{b1}: {below} {above}");
        }
    }

    #[test]
    fn guarded_cycle_rejects_outside_points() {
        let p = ReducedParams::ewe().with_regulator(0.246, 1.9, 0.02);
        assert!(find_limit_cycle_in_r1(&p, &RegionConfig::default(), &CycleOptions::default()).is_err());
        let p = ReducedParams::ewe();
        assert!(find_limit_cycle_in_r1(&p, &RegionConfig::default(), &CycleOptions::default()).is_ok());
    }

    #[test]
    fn homoclinic_window_is_enforced() {
        let p = ReducedParams::ewe();
        let r = homoclinic_b2_numeric(&p, 0.1, 0.01, &RegionConfig::default(), &HomoclinicOptions::default());
        assert!(matches!(r, Err(HomoclinicError::WindowViolation { .. })));
    }

    #[test]
    fn homoclinic_point_at_moderate_eps() {
        let p = ReducedParams::ewe();
        let opts = HomoclinicOptions { b2_tol: 1e-5, ..Default::default() };
        let h = homoclinic_b2_numeric(&p, 0.4, 0.01, &RegionConfig::default(), &opts).unwrap();
        let hc0 = homoclinic0_b2(0.4, MU);
        assert!(h.b2 < hc0 && h.b2 > hc0 - 0.1, "{h:?}");
        assert!(h.gap < 0.0);
        // just above: the cycle is gone
        let above = p.with_regulator(0.4, h.bracket.1 + 1e-4, 0.01);
        assert!(matches!(find_limit_cycle(&above, &CycleOptions::default()), Err(CycleError::NoCycle(_))));
    }

    #[test]
    fn region_is_monotone_in_b2() {
        let cfg = RegionConfig::default();
        for i in 0..50 {
            let b1 = 0.75 * i as f64 / 50.0;
            let mut was_inside = false;
            for j in (0..100).rev() {
                let b2 = 2.5 * j as f64 / 100.0;
                let inside = in_r1(b1, b2, 0.02, MU, &cfg).inside;
                assert!(!(was_inside && !inside), "b1 {b1} b2 {b2}");
                was_inside |= inside;
            }
        }
    }
}
