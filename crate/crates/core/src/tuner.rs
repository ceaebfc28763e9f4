//! Parameter tuning from a physiological cycle specification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Target secretion pattern, durations in days.
///
/// The follicular phase, the surge and the luteal phase are consecutive and
/// disjoint, so the whole cycle is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleSpec {
    pub whole_cycle_days: f64,
    pub follicular_days: f64,
    pub surge_days: f64,
    pub luteal_days: f64,
    pub amplitude_ratio: f64,
    pub frequency_ratio: f64,
    pub end_follicular_pulse_period_minutes: Option<f64>,
    pub early_luteal_pulse_period_minutes: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("{name} = {value}: {reason}")]
    Invalid { name: &'static str, value: f64, reason: &'static str },
    #[error("phases do not add up: {follicular} + {surge} + {luteal} != {whole}")]
    PhaseSum { whole: f64, follicular: f64, surge: f64, luteal: f64 },
}

impl CycleSpec {
    pub fn ewe() -> Self {
        Self {
            whole_cycle_days: 16.5,
            follicular_days: 2.5,
            surge_days: 1.0,
            luteal_days: 13.0,
            amplitude_ratio: 60.0,
            frequency_ratio: 4.0,
            end_follicular_pulse_period_minutes: Some(70.0),
            early_luteal_pulse_period_minutes: Some(150.0),
        }
    }

    pub fn rhesus() -> Self {
        Self {
            whole_cycle_days: 28.0,
            follicular_days: 13.0,
            surge_days: 1.0,
            luteal_days: 14.0,
            amplitude_ratio: 25.0,
            frequency_ratio: 4.0,
            end_follicular_pulse_period_minutes: Some(80.0),
            early_luteal_pulse_period_minutes: Some(120.0),
        }
    }

    /// Ratio the simulated signal must show between luteal and presurge
    /// pulse periods: the pulse-period targets when both are given, the
    /// frequency ratio otherwise.
    pub fn measured_frequency_ratio(&self) -> f64 {
        match (self.early_luteal_pulse_period_minutes, self.end_follicular_pulse_period_minutes) {
            (Some(e), Some(f)) => (e / f).max(1.0),
            _ => self.frequency_ratio,
        }
    }

    pub fn pulsatility_days(&self) -> f64 {
        self.whole_cycle_days - self.surge_days
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let positive = [
            ("whole_cycle_days", self.whole_cycle_days),
            ("follicular_days", self.follicular_days),
            ("surge_days", self.surge_days),
            ("luteal_days", self.luteal_days),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(SpecError::Invalid { name, value, reason: "must be positive" });
            }
        }
        for (name, value) in [
            ("end_follicular_pulse_period_minutes", self.end_follicular_pulse_period_minutes),
            ("early_luteal_pulse_period_minutes", self.early_luteal_pulse_period_minutes),
        ] {
            if let Some(v) = value {
                if !(v.is_finite() && v > 0.0) {
                    return Err(SpecError::Invalid { name, value: v, reason: "must be positive" });
                }
            }
        }
        if !(self.amplitude_ratio > 1.0 && self.amplitude_ratio.is_finite()) {
            return Err(SpecError::Invalid { name: "amplitude_ratio", value: self.amplitude_ratio, reason: "must exceed 1" });
        }
        if !(self.frequency_ratio >= 1.0 && self.frequency_ratio.is_finite()) {
            return Err(SpecError::Invalid { name: "frequency_ratio", value: self.frequency_ratio, reason: "must be at least 1" });
        }
        if self.surge_days > self.follicular_days {
            return Err(SpecError::Invalid { name: "surge_days", value: self.surge_days, reason: "exceeds follicular_days" });
        }
        let sum = self.follicular_days + self.surge_days + self.luteal_days;
        if (sum - self.whole_cycle_days).abs() > 1e-6 * self.whole_cycle_days {
            return Err(SpecError::PhaseSum {
                whole: self.whole_cycle_days,
                follicular: self.follicular_days,
                surge: self.surge_days,
                luteal: self.luteal_days,
            });
        }
        Ok(())
    }
}

use crate::bifurcation::{secub1_window, RegionConfig};
use crate::foliation::{leaf_b2, leaf_window_start, FoliationError, LeafOptions, LeafPoint};
use crate::integrator::{find_limit_cycle, integrate, CycleError, CycleOptions, IntegrateOptions, System};
use crate::model::{ReducedParams, State4};
use crate::quadrature::{self, QuadOptions};
use crate::roots::{bisect, cubic_real_roots, MAX_BISECTION_ITERATIONS};
use crate::signal::{extract_features, FeatureOptions, SignalError, SignalFeatures};

/// One order constraint on `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstraintCheck {
    pub name: &'static str,
    pub bound: f64,
    /// Signed distance from `c` to the bound, positive when satisfied.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintReport {
    pub c: f64,
    pub upper: f64,
    pub lower: f64,
    pub checks: Vec<ConstraintCheck>,
    pub pass: bool,
}

impl ConstraintReport {
    pub fn check(&self, name: &str) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|k| k.name == name)
    }
}

/// Bounds on `c` keeping pulses right after the surge and the surge until
/// the regulator jumps back.
pub fn check_order_constraints(p: &ReducedParams) -> ConstraintReport {
    let l = p.lambda;
    let a = p.a0 * l + 2.0 * p.a1 * l.powi(3);
    let upper = (a + p.a2) / (2.0 * p.mu);
    let left1 = (p.a2 - a) / p.mu;
    let left2 = (a - p.a2) / p.mu;
    let lower = left1.abs();
    let ge = |name, bound: f64| ConstraintCheck { name, bound, margin: p.c - bound, pass: p.c >= bound };
    let checks = vec![
        ConstraintCheck { name: "NonRightHopf", bound: upper, margin: upper - p.c, pass: p.c <= upper },
        ge("NonLeftHopf1", left1),
        ge("NonLeftHopf2", left2),
        ge("LowerBound", lower),
    ];
    let pass = checks.iter().all(|k| k.pass);
    ConstraintReport { c: p.c, upper, lower, checks, pass }
}

/// Best-case pulse period `2 eps int_{-2l}^{-l} f'(x) / (a0 x) dx`, by quadrature.
pub fn t_min(p: &ReducedParams) -> f64 {
    let f = p.f();
    let opts = QuadOptions { rel_tol: 1e-13, abs_tol: 0.0, ..QuadOptions::default() };
    let l = p.lambda;
    // the integrand is smooth on the interval, so this cannot fail
    let r = quadrature::integrate(|x| f.deriv(x) / (p.a0 * x), -2.0 * l, -l, opts).expect("smooth integrand");
    2.0 * p.epsilon * r.value
}

/// Closed form of [`t_min`]: `eps lambda^2 (9 - 6 ln 2) / a0`.
pub fn t_min_closed_form(p: &ReducedParams) -> f64 {
    p.epsilon * p.lambda.powi(2) * (9.0 - 6.0 * std::f64::consts::LN_2) / p.a0
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TuneError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("denominator of the pulse-period integral vanishes at X = {big_x}")]
    SingularIntegrand { big_x: f64 },
    #[error("frequency ratio {target} unreachable: at most {max} from the admissible c interval")]
    FrequencyRatioUnreachable { target: f64, max: f64 },
    #[error("empty c interval: lower bound {lower} exceeds upper bound {upper}")]
    ConstraintConflict { lower: f64, upper: f64 },
    #[error("follicular fraction {target} not reached inside the leaf window (b1 in [{lo}, {hi}], fraction {at_lo} .. {at_hi})")]
    LeafWindowExhausted { target: f64, lo: f64, hi: f64, at_lo: f64, at_hi: f64 },
    #[error("step {step} did not converge after {iterations} iterations")]
    NonConvergence { step: &'static str, iterations: usize },
    #[error("leaf: {0}")]
    Foliation(#[from] FoliationError),
    #[error("regulating cycle: {0}")]
    Cycle(#[from] CycleError),
    #[error("simulation: {0}")]
    Simulation(String),
    #[error("signal: {0}")]
    Signal(#[from] SignalError),
}

impl TuneError {
    /// Variant name, for exit messages.
    pub fn name(&self) -> &'static str {
        match self {
            TuneError::Spec(_) => "InvalidSpec",
            TuneError::SingularIntegrand { .. } => "SingularIntegrand",
            TuneError::FrequencyRatioUnreachable { .. } => "FrequencyRatioUnreachable",
            TuneError::ConstraintConflict { .. } => "ConstraintConflict",
            TuneError::LeafWindowExhausted { .. } => "LeafWindowExhausted",
            TuneError::NonConvergence { .. } => "NonConvergence",
            TuneError::Foliation(_) => "Foliation",
            TuneError::Cycle(_) => "Cycle",
            TuneError::Simulation(_) => "Simulation",
            TuneError::Signal(_) => "Signal",
        }
    }

    /// True when the spec itself cannot be met, as opposed to a numerical failure.
    pub fn is_unreachable(&self) -> bool {
        matches!(
            self,
            TuneError::FrequencyRatioUnreachable { .. } | TuneError::ConstraintConflict { .. } | TuneError::LeafWindowExhausted { .. }
        )
    }
}

/// Relaxation period of the secreting system with `X` frozen.
pub fn pulse_period(p: &ReducedParams, big_x: f64) -> Result<f64, TuneError> {
    let l = p.lambda;
    let f = p.f();
    let k = p.a2 + p.c * big_x;
    // a0 x + a1 f(x) + k = -a1 x^3 + (a0 + 3 a1 l^2) x + k
    let interior = |lo: f64, hi: f64| {
        cubic_real_roots(-p.a1, 0.0, p.a0 + 3.0 * p.a1 * l * l, k)
            .into_iter()
            .any(|r| r > lo + 1e-12 && r < hi - 1e-12)
    };
    if interior(-2.0 * l, -l) || interior(l, 2.0 * l) {
        return Err(TuneError::SingularIntegrand { big_x });
    }
    let integrand = |x: f64| f.deriv(x) / (p.a0 * x + p.a1 * f.eval(x) + k);
    let opts = QuadOptions { rel_tol: 1e-12, abs_tol: 0.0, ..QuadOptions::default() };
    let left = quadrature::integrate(integrand, -2.0 * l, -l, opts).map_err(|_| TuneError::SingularIntegrand { big_x })?;
    let right = quadrature::integrate(integrand, 2.0 * l, l, opts).map_err(|_| TuneError::SingularIntegrand { big_x })?;
    let period = p.epsilon * (left.value + right.value);
    if period.is_finite() && period > 0.0 {
        Ok(period)
    } else {
        Err(TuneError::SingularIntegrand { big_x })
    }
}

/// Pulse period at the start of the pulsatility phase over the one at its end.
pub fn frequency_ratio_estimate(p: &ReducedParams) -> Result<f64, TuneError> {
    frequency_ratio_from(p, -2.0 * p.mu)
}

/// As [`frequency_ratio_estimate`] with the phase starting at `x_start`.
pub fn frequency_ratio_from(p: &ReducedParams, x_start: f64) -> Result<f64, TuneError> {
    Ok(pulse_period(p, x_start)? / pulse_period(p, -p.mu)?)
}

/// Where a requested frequency ratio fell relative to the admissible `c` interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Saturation {
    None,
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CSolution {
    pub c: f64,
    pub target: f64,
    pub achieved: f64,
    /// `P(-2 mu) / P(-mu) - target`, relative to the target.
    pub residual: f64,
    pub max_ratio: f64,
    pub min_ratio: f64,
    pub saturation: Saturation,
}

/// Solves `P(x_start) = rho P(-mu)` for `c` inside the admissible interval,
/// kept `margin` (relative) away from both ends.
///
/// `x_start` is `-2 mu` in the singular limit; at finite `eps` the regulator
/// lands slightly further left, and passing that abscissa also moves the
/// upper bound so the secreting system is not past its Hopf point there.
/// Targets beyond the reachable range take the nearest end, unless they exceed
/// `saturation_limit` times the largest reachable ratio.
pub fn solve_c(p: &ReducedParams, rho: f64, x_start: f64, margin: f64, saturation_limit: f64) -> Result<CSolution, TuneError> {
    let base = ReducedParams { c: 0.0, ..*p };
    let bounds = check_order_constraints(&base);
    let l = p.lambda;
    let reach = -x_start.min(-2.0 * p.mu);
    let hopf_upper = (p.a0 * l + 2.0 * p.a1 * l.powi(3) + p.a2) / reach;
    let (lo, hi) = (bounds.lower, bounds.upper.min(hopf_upper));
    if !(lo < hi) {
        return Err(TuneError::ConstraintConflict { lower: lo, upper: hi });
    }
    let width = hi - lo;
    let (c_lo, c_hi) = (lo + margin * width, hi - margin * width);
    let ratio_at = |c: f64| frequency_ratio_from(&ReducedParams { c, ..base }, -reach);
    let r_lo = ratio_at(c_lo)?;
    let r_hi = ratio_at(c_hi)?;
    let out = |c: f64, achieved: f64, saturation| CSolution {
        c,
        target: rho,
        achieved,
        residual: (achieved - rho) / rho,
        max_ratio: r_hi,
        min_ratio: r_lo,
        saturation,
    };
    if rho > r_hi {
        if rho > saturation_limit * r_hi {
            return Err(TuneError::FrequencyRatioUnreachable { target: rho, max: r_hi });
        }
        return Ok(out(c_hi, r_hi, Saturation::Upper));
    }
    if rho <= r_lo {
        return Ok(out(c_lo, r_lo, Saturation::Lower));
    }
    let mut failure = None;
    let b = bisect(
        |c| match ratio_at(c) {
            Ok(r) => r - rho,
            Err(e) => {
                failure = Some(e);
                f64::NAN
            }
        },
        c_lo,
        c_hi,
        1e-15,
        0.0,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let c = match b {
        Ok(b) => b.root,
        Err(_) => return Err(TuneError::NonConvergence { step: "c", iterations: MAX_BISECTION_ITERATIONS }),
    };
    Ok(out(c, ratio_at(c)?, Saturation::None))
}

/// Largest `P(-2 mu) / P(-mu)` over admissible `a2` and `a0`, with `c` at
/// its upper bound (less the relative margin).
pub fn max_reachable_frequency_ratio(a1: f64, margin: f64, lambda: f64, mu: f64) -> f64 {
    let template = ReducedParams { a1, lambda, mu, epsilon: 1.0, ..ReducedParams::ewe() };
    let n = 24;
    let mut best = f64::NEG_INFINITY;
    for i in 1..n {
        let a2 = lambda * (1.0 + (3f64.sqrt() - 1.0) * i as f64 / n as f64);
        // non-empty c interval: a2 / 3 <= a0 lambda + 2 a1 lambda^3 <= 3 a2
        let lo = (a2 / 3.0 - 2.0 * a1 * lambda.powi(3)).max(1e-3) / lambda;
        let hi = (3.0 * a2 - 2.0 * a1 * lambda.powi(3)) / lambda;
        for j in 1..n {
            let a0 = lo * (hi / lo).powf(j as f64 / n as f64);
            let q = ReducedParams { a0, a2, ..template };
            let b = check_order_constraints(&ReducedParams { c: 0.0, ..q });
            if !(b.lower < b.upper) {
                continue;
            }
            let c = b.upper - margin * (b.upper - b.lower);
            if let Ok(r) = frequency_ratio_estimate(&ReducedParams { c, ..q }) {
                best = best.max(r);
            }
        }
    }
    best
}

/// `a2` positioned in `(lambda, sqrt(3) lambda)` by the amplitude target:
/// ratio 10 maps to the left end, 100 to the right end.
pub fn a2_for_amplitude(amplitude_ratio: f64, lambda: f64) -> (f64, f64) {
    let s = ((amplitude_ratio - 10.0) / 90.0).clamp(0.0, 1.0);
    (lambda + (3f64.sqrt() - 1.0) * lambda * s, s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneConfig {
    pub region: RegionConfig,
    /// Initial `a0`, which fixes the first `eps` through the minimum period.
    pub a0_guess: f64,
    pub a1: f64,
    /// Relative margin kept from both ends of the `c` interval.
    pub c_margin: f64,
    /// Largest multiple of the reachable frequency ratio met by saturation.
    pub frequency_saturation: f64,
    /// Relative tolerance on the simulated amplitude ratio.
    pub amplitude_tol: f64,
    /// Absolute tolerance on the follicular fraction of the cycle.
    pub follicular_tol: f64,
    pub max_outer: usize,
    pub integration_tol: f64,
    pub sample_dt: f64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            region: RegionConfig::default(),
            a0_guess: 0.5,
            a1: 0.01,
            c_margin: 0.01,
            frequency_saturation: 2.5,
            amplitude_tol: 0.02,
            follicular_tol: 0.005,
            max_outer: 8,
            integration_tol: 1e-8,
            sample_dt: 1.0 / 2880.0,
        }
    }
}

/// Per-step records of one tuning run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneDiagnostics {
    /// Position of `a2` in its interval, in `[0, 1]`.
    pub a2_position: f64,
    /// Minimum pulse period in model units.
    pub t_min: f64,
    pub frequency_target: f64,
    pub c_solution: CSolution,
    pub leaf: LeafPoint,
    pub days_per_unit: f64,
    pub cycle_period_units: f64,
    pub amplitude_ratio: f64,
    pub follicular_fraction: f64,
    pub follicular_target: f64,
    pub outer_iterations: usize,
    pub simulations: usize,
    pub history: Vec<OuterRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OuterRecord {
    pub epsilon: f64,
    pub a0: f64,
    pub c: f64,
    pub b1: f64,
    pub b2: f64,
    pub days_per_unit: f64,
    pub amplitude_ratio: f64,
    pub follicular_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TunedResult {
    pub params: ReducedParams,
    pub days_per_unit: f64,
    pub diagnostics: TuneDiagnostics,
    pub constraint_report: ConstraintReport,
}

/// Initial state just after a surge: regulator on its cycle at the downward
/// crossing of `X = 0`, secretor on the left branch.
pub fn post_surge_state(p: &ReducedParams) -> Result<State4, CycleError> {
    let cyc = find_limit_cycle(p, &CycleOptions::default())?;
    let x = -1.5 * p.lambda;
    Ok(State4::new(x, p.f().eval(x), cyc.section_state.0, cyc.section_state.1))
}

/// Simulates `cycles` regulator periods from the post-surge state.
pub fn simulate_cycles(p: &ReducedParams, cycles: f64, tol: f64, sample_dt: f64) -> Result<(crate::integrator::Trajectory, f64), TuneError> {
    let cyc = find_limit_cycle(p, &CycleOptions::default())?;
    let x = -1.5 * p.lambda;
    let s0 = State4::new(x, p.f().eval(x), cyc.section_state.0, cyc.section_state.1);
    let opts = IntegrateOptions { tol, sample_dt: Some(sample_dt), ..IntegrateOptions::default() };
    let traj = integrate(System::Full4, p, s0, cycles * cyc.period, &opts).map_err(|e| TuneError::Simulation(e.to_string()))?;
    Ok((traj, cyc.period))
}

fn trace(args: std::fmt::Arguments) {
    if std::env::var_os("PULSESURGE_TRACE").is_some() {
        eprintln!("{args}");
    }
}

/// A monotone scalar search: `value` is the signed error, `aux` is carried along.
struct Probe<A> {
    value: f64,
    aux: A,
}

enum SearchError<A> {
    /// The bracket could not be closed before `edge`.
    Edge { edge: f64, at_start: A, at_edge: Option<A> },
    Failed(TuneError),
}

impl<A> From<TuneError> for SearchError<A> {
    fn from(e: TuneError) -> Self {
        SearchError::Failed(e)
    }
}

/// Finds `x` in `[min, max]` with `|f(x)| <= ftol` for an `f` increasing in `x`,
/// walking from `x0` with additive `step` until the sign changes, then
/// bisecting (geometric midpoints when `log` is set).
#[allow(clippy::too_many_arguments)]
fn monotone_search<A: Clone, F>(
    mut f: F,
    x0: f64,
    step: f64,
    min: f64,
    max: f64,
    log: bool,
    ftol: f64,
    name: &'static str,
) -> Result<(f64, Probe<A>), SearchError<A>>
where
    F: FnMut(f64) -> Result<Probe<A>, TuneError>,
{
    let start = f(x0)?;
    if start.value.abs() <= ftol {
        return Ok((x0, start));
    }
    let up = start.value < 0.0;
    let next = |x: f64| {
        let n = match (log, up) {
            (true, true) => x * (1.0 + step),
            (true, false) => x / (1.0 + step),
            (false, true) => x + step,
            (false, false) => x - step,
        };
        n.clamp(min, max)
    };
    // (x, f) on the negative and positive sides
    let (mut neg, mut pos) = if up { ((x0, start.value), (f64::NAN, f64::NAN)) } else { ((f64::NAN, f64::NAN), (x0, start.value)) };
    let mut x = x0;
    loop {
        let xn = next(x);
        if xn == x {
            return Err(SearchError::Edge { edge: x, at_start: start.aux, at_edge: None });
        }
        let pr = match f(xn) {
            Ok(pr) => pr,
            Err(TuneError::Foliation(_)) | Err(TuneError::Cycle(_)) => {
                // the leaf or the cycle ends before the window edge does
                return Err(SearchError::Edge { edge: xn, at_start: start.aux, at_edge: None });
            }
            Err(e) => return Err(e.into()),
        };
        if pr.value.abs() <= ftol {
            return Ok((xn, pr));
        }
        if (pr.value < 0.0) == up {
            if xn == min || xn == max {
                return Err(SearchError::Edge { edge: xn, at_start: start.aux, at_edge: Some(pr.aux) });
            }
            if up {
                neg = (xn, pr.value);
            } else {
                pos = (xn, pr.value);
            }
            x = xn;
            continue;
        }
        if up {
            pos = (xn, pr.value);
        } else {
            neg = (xn, pr.value);
        }
        break;
    }
    let (mut a, mut b) = (neg.0, pos.0);
    for _ in 0..MAX_BISECTION_ITERATIONS {
        let m = if log { (a * b).sqrt() } else { 0.5 * (a + b) };
        let pr = f(m)?;
        if pr.value.abs() <= ftol || (a - b).abs() <= 1e-6 * m.abs() {
            return Ok((m, pr));
        }
        if pr.value < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    Err(TuneError::NonConvergence { step: name, iterations: MAX_BISECTION_ITERATIONS }.into())
}

struct Tuner<'a> {
    cfg: &'a TuneConfig,
    rho: f64,
    r: f64,
    simulations: usize,
}

struct Measured {
    features: SignalFeatures,
    period: f64,
}

impl Tuner<'_> {
    fn measure(&mut self, p: &ReducedParams) -> Result<Measured, TuneError> {
        self.simulations += 1;
        // from just after a surge: the next surge and the start of the one after
        let (traj, period) = simulate_cycles(p, 2.05, self.cfg.integration_tol, self.cfg.sample_dt)?;
        let opts = FeatureOptions { use_x: true, frequency_target: Some(self.rho) };
        Ok(Measured { features: extract_features(&traj, &opts)?, period })
    }

    /// Puts the regulator on the leaf and sets `c` for the resulting `X_min`.
    fn place(&self, p: &ReducedParams, b1: f64, epsilon: f64) -> Result<(ReducedParams, CSolution, LeafPoint), TuneError> {
        let lp = leaf_b2(p, self.r, b1, epsilon, &self.cfg.region, &LeafOptions::default())?;
        let q = p.with_regulator(b1, lp.b2, epsilon);
        let x_min = find_limit_cycle(&q, &CycleOptions::default())?.x_min;
        let sol = solve_c(&q, self.rho, x_min, self.cfg.c_margin, self.cfg.frequency_saturation)?;
        Ok((ReducedParams { c: sol.c, ..q }, sol, lp))
    }
}

/// Converts a spec into a parameter set whose simulated signal meets it.
///
/// The regulating cycle length in model units is fixed by `delta`, so the
/// time unit is an output: `days_per_unit` maps the simulated cycle onto
/// `whole_cycle_days`.
pub fn tune(spec: &CycleSpec, cfg: &TuneConfig) -> Result<TunedResult, TuneError> {
    spec.validate()?;
    let template = ReducedParams::ewe();
    let (lambda, mu) = (template.lambda, template.mu);
    let rho = spec.measured_frequency_ratio();
    let max_ratio = max_reachable_frequency_ratio(cfg.a1, cfg.c_margin, lambda, mu);
    if spec.frequency_ratio > cfg.frequency_saturation * max_ratio {
        return Err(TuneError::FrequencyRatioUnreachable { target: spec.frequency_ratio, max: max_ratio });
    }
    let r = spec.pulsatility_days() / spec.surge_days;
    let mut t = Tuner { cfg, rho, r, simulations: 0 };

    // step 1; a1 (step 5) enters every later step, so it is fixed up front
    let (a2, a2_position) = a2_for_amplitude(spec.amplitude_ratio, lambda);
    let mut p = ReducedParams { a1: cfg.a1, a2, a0: cfg.a0_guess, ..template };

    let window_lo = leaf_window_start(r, mu, &cfg.region)?;
    let window_hi = secub1_window(mu, cfg.region.alpha).1;
    let (b1_min, b1_max) = (window_lo + 1e-6 * (window_hi - window_lo), window_hi - 1e-6 * (window_hi - window_lo));
    let follicular_target = spec.follicular_days / spec.whole_cycle_days;
    let mut b1 = window_lo + 0.25 * (window_hi - window_lo);
    let mut epsilon = template.epsilon;
    let mut history = Vec::new();

    let mut outer = 0;
    let result = loop {
        outer += 1;
        let (q, _, _) = t.place(&p, b1, epsilon)?;
        let days_per_unit = spec.whole_cycle_days / find_limit_cycle(&q, &CycleOptions::default())?.period;
        let t_min_units = match spec.end_follicular_pulse_period_minutes {
            Some(m) => m / (1440.0 * days_per_unit),
            None => t_min(&q),
        };

        // steps 2 to 4: a0 on the amplitude ratio, eps tied to a0 through t_min, c re-solved
        let amp = |a0: f64, t: &mut Tuner| -> Result<Probe<ReducedParams>, TuneError> {
            let eps = t_min_units / t_min_closed_form(&ReducedParams { a0, epsilon: 1.0, ..p });
            let (q, sol, _) = t.place(&ReducedParams { a0, ..p }, b1, eps)?;
            let m = t.measure(&q)?;
            trace(format_args!("a0 {a0:.5} eps {eps:.5} c {:.5} ({:?}) amplitude {:.3}", sol.c, sol.saturation, m.features.amplitude_ratio));
            // amplitude falls as a0 grows
            Ok(Probe { value: -(m.features.amplitude_ratio / spec.amplitude_ratio).ln(), aux: q })
        };
        let (_, got) = monotone_search(|a0| amp(a0, &mut t), p.a0, 0.15, 0.02, 5.0, true, cfg.amplitude_tol, "a0")
            .map_err(|e| match e {
                SearchError::Failed(e) => e,
                SearchError::Edge { .. } => TuneError::NonConvergence { step: "a0", iterations: 0 },
            })?;
        p = got.aux;
        epsilon = p.epsilon;

        // step 6: b1 along the leaf on the follicular fraction, which shrinks as b1 grows
        let foll = |b1: f64, t: &mut Tuner| -> Result<Probe<(ReducedParams, f64)>, TuneError> {
            let (q, _, lp) = t.place(&p, b1, epsilon)?;
            let m = t.measure(&q)?;
            let ff = m.features.follicular_duration / m.features.cycle_period;
            trace(format_args!("b1 {b1:.5} b2 {:.6} c {:.5} follicular {ff:.4} target {follicular_target:.4}", lp.b2, q.c));
            Ok(Probe { value: follicular_target - ff, aux: (q, ff) })
        };
        let (b1_new, got) = monotone_search(|b| foll(b, &mut t), b1, 0.03, b1_min, b1_max, false, cfg.follicular_tol, "b1")
            .map_err(|e| match e {
                SearchError::Failed(e) => e,
                SearchError::Edge { edge, at_start, at_edge } => TuneError::LeafWindowExhausted {
                    target: follicular_target,
                    lo: b1.min(edge),
                    hi: b1.max(edge),
                    at_lo: if edge < b1 { at_edge.map_or(f64::NAN, |a| a.1) } else { at_start.1 },
                    at_hi: if edge < b1 { at_start.1 } else { at_edge.map_or(f64::NAN, |a| a.1) },
                },
            })?;
        b1 = b1_new;
        p = got.aux.0;

        // b1 moved the period, hence the time unit, eps and the amplitude
        let m = t.measure(&p)?;
        let dpu = spec.whole_cycle_days / m.period;
        let ff = m.features.follicular_duration / m.features.cycle_period;
        history.push(OuterRecord {
            epsilon,
            a0: p.a0,
            c: p.c,
            b1: p.b1,
            b2: p.b2,
            days_per_unit: dpu,
            amplitude_ratio: m.features.amplitude_ratio,
            follicular_fraction: ff,
        });
        trace(format_args!("outer {outer}: dpu {dpu:.5} (was {days_per_unit:.5}) amplitude {:.3} follicular {ff:.4}", m.features.amplitude_ratio));
        let amp_ok = (m.features.amplitude_ratio / spec.amplitude_ratio).ln().abs() <= cfg.amplitude_tol;
        let foll_ok = (ff - follicular_target).abs() <= cfg.follicular_tol;
        let unit_ok = (dpu / days_per_unit - 1.0).abs() <= 1e-3;
        if (amp_ok && foll_ok && unit_ok) || outer >= cfg.max_outer {
            break (m, dpu);
        }
    };
    let (m, dpu) = result;
    let (_, sol, leaf) = t.place(&p, p.b1, p.epsilon)?;
    let constraint_report = check_order_constraints(&p);
    Ok(TunedResult {
        params: p,
        days_per_unit: dpu,
        diagnostics: TuneDiagnostics {
            a2_position,
            t_min: t_min(&p),
            frequency_target: rho,
            c_solution: sol,
            leaf,
            days_per_unit: dpu,
            cycle_period_units: m.period,
            amplitude_ratio: m.features.amplitude_ratio,
            follicular_fraction: m.features.follicular_duration / m.features.cycle_period,
            follicular_target,
            outer_iterations: outer,
            simulations: t.simulations,
            history,
        },
        constraint_report,
    })
}
