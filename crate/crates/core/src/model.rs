//! Parameter records, vector fields and analytic landmarks of the coupled
//! pulse-and-surge system
//!
//! ```text
//!   eps*delta * x' = -y + f(x)
//!   eps       * y' = a0 x + a1 y + a2 + c X
//!   eps*gamma * X' = -Y + g(X)
//!               Y' = b0 X + b1 Y + b2
//! ```
//!
//! After reduction (`b0 = gamma = 1`) the cubics are kept in the normal form
//! `f(x) = -x^3 + 3 lambda^2 x`, `g(X) = -X^3 + 3 mu^2 X`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roots::cubic_real_roots;

/// Fast-fast ratio used for every tuned parameter set.
pub const DEFAULT_DELTA: f64 = 0.0125;

/// Tolerance under which an equilibrium or a secretor root is reported as
/// sitting on a transition rather than classified.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// `lambda` for `f(x) = -x^3 + 2.5 x`.
pub fn default_lambda() -> f64 {
    (2.5f64 / 3.0).sqrt()
}

/// `mu` for `g(X) = -X^3 + 4 X`.
pub fn default_mu() -> f64 {
    2.0 / 3f64.sqrt()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    Invalid { name: &'static str, value: f64, reason: &'static str },
    #[error("cubic {which} is not in normal form -x^3 + 3 s^2 x (coefficients {cubic:?})")]
    NonNormalCubic { which: &'static str, cubic: [f64; 3] },
}

/// Normal-form cubic `-x^3 + 3 s^2 x` with landmark half-width `s > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalCubic {
    pub s: f64,
}

impl NormalCubic {
    pub fn new(s: f64) -> Self {
        Self { s }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        x * (3.0 * self.s * self.s - x * x)
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        3.0 * (self.s * self.s - x * x)
    }

    /// Local maximum `(s, 2 s^3)`.
    pub fn p_plus(&self) -> Point {
        Point::new(self.s, 2.0 * self.s.powi(3))
    }

    /// Local minimum `(-s, -2 s^3)`.
    pub fn p_minus(&self) -> Point {
        Point::new(-self.s, -2.0 * self.s.powi(3))
    }

    /// Projection of `p_plus` onto the left branch along a horizontal line.
    pub fn q_plus(&self) -> Point {
        Point::new(-2.0 * self.s, 2.0 * self.s.powi(3))
    }

    /// Projection of `p_minus` onto the right branch.
    pub fn q_minus(&self) -> Point {
        Point::new(2.0 * self.s, -2.0 * self.s.powi(3))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Raw coefficients of the full system before removing `b0` and `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullParams {
    pub epsilon: f64,
    pub delta: f64,
    pub gamma: f64,
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub c: f64,
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    /// `f(x) = nu[0] x^3 + nu[1] x^2 + nu[2] x`
    pub nu: [f64; 3],
    /// `g(X) = mu[0] X^3 + mu[1] X^2 + mu[2] X`
    pub mu: [f64; 3],
}

impl FullParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let positive = [
            ("epsilon", self.epsilon),
            ("delta", self.delta),
            ("gamma", self.gamma),
            ("b0", self.b0),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ParamError::Invalid { name, value, reason: "must be positive" });
            }
        }
        let nonneg = [
            ("a0", self.a0),
            ("a1", self.a1),
            ("a2", self.a2),
            ("c", self.c),
            ("b1", self.b1),
            ("b2", self.b2),
            ("nu2", self.nu[2]),
            ("mu2", self.mu[2]),
        ];
        for (name, value) in nonneg {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ParamError::Invalid { name, value, reason: "must be non-negative" });
            }
        }
        if !(self.nu[0] < 0.0) {
            return Err(ParamError::Invalid { name: "nu0", value: self.nu[0], reason: "must be negative" });
        }
        if !(self.mu[0] < 0.0) {
            return Err(ParamError::Invalid { name: "mu0", value: self.mu[0], reason: "must be negative" });
        }
        Ok(())
    }
}

/// The eight tunable values plus the two cubic shape constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedParams {
    pub epsilon: f64,
    pub delta: f64,
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub c: f64,
    pub b1: f64,
    pub b2: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl ReducedParams {
    /// Parameter set published for the ewe ovarian cycle.
    pub fn ewe() -> Self {
        Self {
            epsilon: 0.02,
            delta: DEFAULT_DELTA,
            a0: 0.52,
            a1: 0.011,
            a2: 1.14,
            c: 0.70,
            b1: 0.246,
            b2: 1.5103,
            lambda: default_lambda(),
            mu: default_mu(),
        }
    }

    /// Parameter set published for the rhesus monkey menstrual cycle.
    pub fn rhesus() -> Self {
        Self {
            epsilon: 0.018,
            delta: DEFAULT_DELTA,
            a0: 0.7,
            a1: 0.013,
            a2: 1.0,
            c: 0.67,
            b1: 0.187,
            b2: 1.704,
            lambda: default_lambda(),
            mu: default_mu(),
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let positive = [
            ("epsilon", self.epsilon),
            ("delta", self.delta),
            ("lambda", self.lambda),
            ("mu", self.mu),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ParamError::Invalid { name, value, reason: "must be positive" });
            }
        }
        for (name, value) in [
            ("a0", self.a0),
            ("a1", self.a1),
            ("a2", self.a2),
            ("c", self.c),
            ("b1", self.b1),
            ("b2", self.b2),
        ] {
            if !value.is_finite() {
                return Err(ParamError::Invalid { name, value, reason: "must be finite" });
            }
        }
        Ok(())
    }

    #[inline]
    pub fn f(&self) -> NormalCubic {
        NormalCubic::new(self.lambda)
    }

    #[inline]
    pub fn g(&self) -> NormalCubic {
        NormalCubic::new(self.mu)
    }

    pub fn landmarks(&self) -> Landmarks {
        let (f, g) = (self.f(), self.g());
        Landmarks {
            pf_plus: f.p_plus(),
            pf_minus: f.p_minus(),
            qf_plus: f.q_plus(),
            qf_minus: f.q_minus(),
            pg_plus: g.p_plus(),
            pg_minus: g.p_minus(),
            qg_plus: g.q_plus(),
            qg_minus: g.q_minus(),
        }
    }

    /// Copy with the regulator coordinates `(b1, b2, epsilon)` replaced.
    pub fn with_regulator(mut self, b1: f64, b2: f64, epsilon: f64) -> Self {
        self.b1 = b1;
        self.b2 = b2;
        self.epsilon = epsilon;
        self
    }

    /// `X + b1 g(X) + b2`, the Y-nullcline evaluated on the cubic `Y = g(X)`.
    #[inline]
    pub fn nullcline_on_cubic(&self, x: f64) -> f64 {
        x + self.b1 * self.g().eval(x) + self.b2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmarks {
    pub pf_plus: Point,
    pub pf_minus: Point,
    pub qf_plus: Point,
    pub qf_minus: Point,
    pub pg_plus: Point,
    pub pg_minus: Point,
    pub qg_plus: Point,
    pub qg_minus: Point,
}

/// Phase-space point `(x, y, X, Y)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State4 {
    pub x: f64,
    pub y: f64,
    #[serde(rename = "X")]
    pub big_x: f64,
    #[serde(rename = "Y")]
    pub big_y: f64,
}

impl State4 {
    pub const fn new(x: f64, y: f64, big_x: f64, big_y: f64) -> Self {
        Self { x, y, big_x, big_y }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.big_x, self.big_y]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Removes `b0` (with a time rescaling `t' = b0 t`) and then `gamma`.
pub fn reduce(raw: &FullParams) -> Result<ReducedParams, ParamError> {
    raw.validate()?;
    for (which, cubic) in [("f", raw.nu), ("g", raw.mu)] {
        if cubic[1] != 0.0 || cubic[0] != -1.0 || !(cubic[2] > 0.0) {
            return Err(ParamError::NonNormalCubic { which, cubic });
        }
    }
    // b0 -> 1
    let eps1 = raw.b0 * raw.epsilon;
    let b1 = raw.b1 / raw.b0;
    let b2 = raw.b2 / raw.b0;
    // gamma -> 1
    let g = raw.gamma;
    Ok(ReducedParams {
        epsilon: eps1 * g,
        delta: raw.delta / g,
        a0: raw.a0 * g,
        a1: raw.a1 * g,
        a2: raw.a2 * g,
        c: raw.c * g,
        b1,
        b2,
        lambda: (raw.nu[2] / 3.0).sqrt(),
        mu: (raw.mu[2] / 3.0).sqrt(),
    })
}

/// Full 4D vector field in slow time.
#[inline]
pub fn field4(s: &State4, p: &ReducedParams) -> State4 {
    let (f, g) = (p.f(), p.g());
    State4 {
        x: (-s.y + f.eval(s.x)) / (p.epsilon * p.delta),
        y: (p.a0 * s.x + p.a1 * s.y + p.a2 + p.c * s.big_x) / p.epsilon,
        big_x: (-s.big_y + g.eval(s.big_x)) / p.epsilon,
        big_y: s.big_x + p.b1 * s.big_y + p.b2,
    }
}

/// Regulating system in fast time `tau = t / eps`.
#[inline]
pub fn field2(big_x: f64, big_y: f64, p: &ReducedParams) -> (f64, f64) {
    (
        -big_y + p.g().eval(big_x),
        p.epsilon * (big_x + p.b1 * big_y + p.b2),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchPosition {
    Left,
    Middle,
    Right,
    /// `|X*| = mu` within [`DEGENERACY_TOL`].
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EquilibriumKind {
    Attractor,
    Repeller,
    Saddle,
    /// Zero trace or determinant.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub x: f64,
    pub y: f64,
    pub position: BranchPosition,
    pub kind: EquilibriumKind,
    pub trace: f64,
    pub determinant: f64,
}

/// Jacobian trace and determinant of [`field2`] at `(X, g(X))`.
pub fn regulator_jacobian(big_x: f64, p: &ReducedParams) -> (f64, f64) {
    let gp = p.g().deriv(big_x);
    let trace = gp + p.epsilon * p.b1;
    let det = p.epsilon * (gp * p.b1 + 1.0);
    (trace, det)
}

/// Equilibria of the regulating system: roots of `X + b1 g(X) + b2 = 0`.
pub fn regulator_equilibria(p: &ReducedParams) -> Vec<Equilibrium> {
    let mu2 = p.mu * p.mu;
    // -b1 X^3 + (1 + 3 mu^2 b1) X + b2
    let roots = cubic_real_roots(-p.b1, 0.0, 1.0 + 3.0 * mu2 * p.b1, p.b2);
    let mut out = Vec::with_capacity(roots.len());
    for x in roots {
        // drop duplicates produced by double roots
        if out.iter().any(|e: &Equilibrium| (e.x - x).abs() < 1e-12) {
            continue;
        }
        let position = if (x.abs() - p.mu).abs() < DEGENERACY_TOL {
            BranchPosition::Degenerate
        } else if x < -p.mu {
            BranchPosition::Left
        } else if x > p.mu {
            BranchPosition::Right
        } else {
            BranchPosition::Middle
        };
        let (trace, determinant) = regulator_jacobian(x, p);
        let kind = if determinant.abs() < DEGENERACY_TOL * p.epsilon.max(1e-300) || trace.abs() < DEGENERACY_TOL {
            EquilibriumKind::Degenerate
        } else if determinant < 0.0 {
            EquilibriumKind::Saddle
        } else if trace < 0.0 {
            EquilibriumKind::Attractor
        } else {
            EquilibriumKind::Repeller
        };
        out.push(Equilibrium { x, y: p.g().eval(x), position, kind, trace, determinant });
    }
    out
}

/// The equilibrium continuing the middle branch: the middle one of three
/// roots, or the only root. It leaves `[-mu, mu]` across the Hopf surface.
pub fn middle_equilibrium(p: &ReducedParams) -> Option<Equilibrium> {
    let eq = regulator_equilibria(p);
    match eq.len() {
        1 => eq.first().copied(),
        3 => eq.get(1).copied(),
        // a double root: keep the one nearest the fold
        _ => eq.into_iter().min_by(|a, b| (a.x + p.mu).abs().partial_cmp(&(b.x + p.mu).abs()).unwrap()),
    }
}

/// Left saddle `X_- < -mu`, when it exists.
pub fn left_saddle(p: &ReducedParams) -> Option<Equilibrium> {
    regulator_equilibria(p).into_iter().find(|e| e.x < -p.mu - DEGENERACY_TOL)
}

/// Behavior of the secretor subsystem with the coupling value `X` frozen,
/// in the order traversed as `X` increases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SecretorRegime {
    UniqueLeft = 1,
    SaddleNodeInverse = 2,
    ThreePointsRightAttractor = 3,
    HopfOnset = 4,
    MiddleWithLimitCycle = 5,
    HopfOffset = 6,
    ThreePointsLeftAttractor = 7,
    SaddleNode = 8,
    UniqueRight = 9,
}

impl SecretorRegime {
    pub fn index(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeClass {
    /// Nearest open regime (1, 3, 5, 7 or 9).
    pub regime: SecretorRegime,
    /// Set when the frozen value sits on a bifurcation (2, 4, 6 or 8).
    pub transition: Option<SecretorRegime>,
}

/// Classifies the frozen-`X` secretor subsystem.
///
/// Equilibria solve `a0 x + a1 f(x) + a2 + c X = 0`; the root on the
/// increasing part of that cubic is the main one, its stability is set by
/// the sign of `f'(x) + a1 delta`, and the two outer roots (when present) are
/// saddles far out on the branches.
pub fn secretor_regime(big_x: f64, p: &ReducedParams) -> RegimeClass {
    use SecretorRegime::*;
    let lam2 = p.lambda * p.lambda;
    let shift = p.a2 + p.c * big_x;
    // phi(x) = a0 x + a1 f(x) = -a1 x^3 + (a0 + 3 a1 lambda^2) x ; roots of phi + shift
    let lin = p.a0 + 3.0 * p.a1 * lam2;
    let roots = cubic_real_roots(-p.a1, 0.0, lin, shift);
    // turning points of phi: x^2 = lin / (3 a1)
    let turn = if p.a1 > 0.0 { (lin / (3.0 * p.a1)).sqrt() } else { f64::INFINITY };
    let hopf_x = (lam2 + p.a1 * p.delta / 3.0).sqrt();

    // saddle-node distance: |shift| against the extreme value of phi at the turning point
    let sn_shift = if turn.is_finite() { lin * turn - p.a1 * turn.powi(3) } else { f64::INFINITY };
    let sn_gap = (shift.abs() - sn_shift).abs();

    let main = roots.iter().copied().filter(|x| x.abs() < turn).min_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
    let Some(xm) = main else {
        // only an outer root: far up on the left branch (shift very negative) or far down on the right
        let regime = if shift < 0.0 { UniqueLeft } else { UniqueRight };
        let transition = (sn_gap < DEGENERACY_TOL).then_some(if shift < 0.0 { SaddleNodeInverse } else { SaddleNode });
        return RegimeClass { regime, transition };
    };

    let regime = if xm > hopf_x {
        ThreePointsRightAttractor
    } else if xm < -hopf_x {
        ThreePointsLeftAttractor
    } else {
        MiddleWithLimitCycle
    };
    let transition = if (xm - hopf_x).abs() < DEGENERACY_TOL {
        Some(HopfOnset)
    } else if (xm + hopf_x).abs() < DEGENERACY_TOL {
        Some(HopfOffset)
    } else if sn_gap < DEGENERACY_TOL {
        Some(if shift < 0.0 { SaddleNodeInverse } else { SaddleNode })
    } else {
        None
    };
    // with a1 = 0 the outer roots do not exist; the main-root position still
    // orders the regimes, but regimes 1 and 9 collapse into 3 and 7
    RegimeClass { regime, transition }
}
