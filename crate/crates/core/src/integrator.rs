//! Dormand–Prince 5(4) integration with PI step control, dense output,
//! event location and Poincaré-section limit-cycle extraction.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{field4, ReducedParams, State4};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrationError {
    #[error("step size underflow at t = {t} (h = {h})")]
    StiffnessFailure { t: f64, h: f64 },
    #[error("step budget of {steps} exhausted at t = {t}")]
    StepLimit { t: f64, steps: usize },
    #[error("state is not finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid integration request: {0}")]
    InvalidInput(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Largest step; `f64::INFINITY` leaves it to the controller.
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-8, h_max: f64::INFINITY, max_steps: 50_000_000 }
    }
}

// Butcher tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// continuous extension
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step with its quartic interpolant.
#[derive(Debug, Clone, Copy)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub h: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    r: [[f64; N]; 4],
}

impl<const N: usize> DenseStep<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// State at `t` in `[t0, t0 + h]`.
    pub fn eval(&self, t: f64) -> [f64; N] {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let mut out = [0.0; N];
        for i in 0..N {
            let [r2, r3, r4, r5] = [self.r[0][i], self.r[1][i], self.r[2][i], self.r[3][i]];
            out[i] = self.y0[i] + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5)));
        }
        out
    }

    /// Bisects `g` along the interpolant between `ta < tb`, where `g` has
    /// opposite signs at both ends; returns the time and the state.
    pub fn locate<G: Fn(&[f64; N]) -> f64>(&self, g: &G, mut ta: f64, mut tb: f64) -> (f64, [f64; N]) {
        let mut ga = g(&self.eval(ta));
        for _ in 0..200 {
            if tb - ta <= 1e-13 * self.t0.abs().max(1.0) {
                break;
            }
            let tm = 0.5 * (ta + tb);
            let gm = g(&self.eval(tm));
            if gm == 0.0 {
                return (tm, self.eval(tm));
            }
            if (gm > 0.0) == (ga > 0.0) {
                ta = tm;
                ga = gm;
            } else {
                tb = tm;
            }
        }
        let t = 0.5 * (ta + tb);
        (t, self.eval(t))
    }
}

/// Adaptive stepper over a fixed-size state.
pub struct Stepper<const N: usize, F> {
    f: F,
    t: f64,
    y: [f64; N],
    k1: [f64; N],
    h: f64,
    err_old: f64,
    opts: StepOptions,
    pub steps: usize,
    pub rejected: usize,
}

impl<const N: usize, F> Stepper<N, F>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    pub fn new(mut f: F, t0: f64, y0: [f64; N], opts: StepOptions) -> Result<Self, IntegrationError> {
        if !(opts.rtol > 0.0 && opts.atol > 0.0) {
            return Err(IntegrationError::InvalidInput("tolerances must be positive"));
        }
        if !y0.iter().all(|v| v.is_finite()) {
            return Err(IntegrationError::NonFinite { t: t0 });
        }
        let k1 = f(t0, &y0);
        let h = initial_step(&y0, &k1, &opts);
        Ok(Self { f, t: t0, y: y0, k1, h, err_old: 1e-4, opts, steps: 0, rejected: 0 })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> [f64; N] {
        self.y
    }

    /// Takes one accepted step, never passing `t_stop`.
    pub fn step(&mut self, t_stop: f64) -> Result<DenseStep<N>, IntegrationError> {
        let opts = self.opts;
        let (t, y, k1) = (self.t, self.y, self.k1);
        loop {
            if self.steps + self.rejected >= opts.max_steps {
                return Err(IntegrationError::StepLimit { t, steps: opts.max_steps });
            }
            let mut h = self.h.min(opts.h_max);
            let mut last = false;
            if t + h >= t_stop {
                h = t_stop - t;
                last = true;
            }
            if h <= 1e-14 * t.abs().max(1.0) && !last {
                return Err(IntegrationError::StiffnessFailure { t, h });
            }
            let f = &mut self.f;
            let stage = |coef: &[(f64, &[f64; N])]| {
                let mut s = y;
                for (a, k) in coef {
                    for i in 0..N {
                        s[i] += h * a * k[i];
                    }
                }
                s
            };
            let k2 = f(t + C2 * h, &stage(&[(A21, &k1)]));
            let k3 = f(t + C3 * h, &stage(&[(A31, &k1), (A32, &k2)]));
            let k4 = f(t + C4 * h, &stage(&[(A41, &k1), (A42, &k2), (A43, &k3)]));
            let k5 = f(t + C5 * h, &stage(&[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
            let k6 = f(t + h, &stage(&[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
            let y1 = stage(&[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
            let k7 = f(t + h, &y1);

            let mut err = 0.0;
            let mut finite = true;
            for i in 0..N {
                let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = opts.atol + opts.rtol * y[i].abs().max(y1[i].abs());
                err += (e / sc).powi(2);
                finite &= y1[i].is_finite() && k7[i].is_finite();
            }
            err = (err / N as f64).sqrt();
            if !finite || !err.is_finite() {
                // shrink hard and retry; persistent blow-up ends in underflow
                self.rejected += 1;
                self.h = h * 0.1;
                if self.h <= 1e-14 * t.abs().max(1.0) {
                    return Err(IntegrationError::NonFinite { t });
                }
                continue;
            }

            if err <= 1.0 {
                // PI controller (Gustafsson), exponents as in Hairer & Wanner
                let fac = 0.9 * err.max(1e-10).powf(-0.17) * self.err_old.powf(0.04);
                let fac = fac.clamp(0.2, 10.0);
                self.err_old = err.max(1e-4);
                if !last {
                    self.h = h * fac;
                }
                let mut r = [[0.0; N]; 4];
                for i in 0..N {
                    let dy = y1[i] - y[i];
                    let bspl = h * k1[i] - dy;
                    r[0][i] = dy;
                    r[1][i] = bspl;
                    r[2][i] = dy - h * k7[i] - bspl;
                    r[3][i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                }
                let step = DenseStep { t0: t, h, y0: y, y1, r };
                self.t = if last { t_stop } else { t + h };
                self.y = y1;
                self.k1 = k7;
                self.steps += 1;
                return Ok(step);
            }
            self.rejected += 1;
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            self.h = h * fac;
            if self.h <= 1e-14 * t.abs().max(1.0) {
                return Err(IntegrationError::StiffnessFailure { t, h: self.h });
            }
        }
    }
}

fn initial_step<const N: usize>(y0: &[f64; N], f0: &[f64; N], opts: &StepOptions) -> f64 {
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..N {
        let sc = opts.atol + opts.rtol * y0[i].abs();
        d0 += (y0[i] / sc).powi(2);
        d1 += (f0[i] / sc).powi(2);
    }
    let (d0, d1) = ((d0 / N as f64).sqrt(), (d1 / N as f64).sqrt());
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.min(opts.h_max).max(1e-12)
}

/// Which vector field to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum System {
    Full4,
    /// `(X, Y)` only, in the same slow time as [`System::Full4`].
    Regulator2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    XUpCross,
    XDownCross,
    YPulsePeak,
    SurgePeak,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::XUpCross => "XUpCross",
            EventKind::XDownCross => "XDownCross",
            EventKind::YPulsePeak => "YPulsePeak",
            EventKind::SurgePeak => "SurgePeak",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "XUpCross" => EventKind::XUpCross,
            "XDownCross" => EventKind::XDownCross,
            "YPulsePeak" => EventKind::YPulsePeak,
            "SurgePeak" => EventKind::SurgePeak,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub state: State4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    /// Absolute and relative tolerance.
    pub tol: f64,
    /// Output sampling interval; `None` stores every accepted step.
    pub sample_dt: Option<f64>,
    pub max_steps: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self { tol: 1e-8, sample_dt: Some(DEFAULT_SAMPLE_DT), max_steps: 50_000_000 }
    }
}

/// 2880 samples per unit, i.e. 30 s when one unit is one day.
pub const DEFAULT_SAMPLE_DT: f64 = 1.0 / 2880.0;

/// Pulse peaks must rise this far above their surroundings (times `4 lambda^3`).
pub const PROMINENCE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State4>,
    pub events: Vec<Event>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn last_state(&self) -> Option<State4> {
        self.states.last().copied()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,x,y,X,Y")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            writeln!(w, "{t:.12e},{:.12e},{:.12e},{:.12e},{:.12e}", s.x, s.y, s.big_x, s.big_y)?;
        }
        Ok(())
    }

    pub fn write_events_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,kind")?;
        for e in &self.events {
            writeln!(w, "{:.12e},{}", e.t, e.kind.name())?;
        }
        Ok(())
    }

    /// Reads a `t,x,y,X,Y` file; events are rebuilt from the samples with
    /// [`detect_sampled_events`].
    pub fn read_csv<R: BufRead>(r: R, lambda: f64) -> Result<Self, CsvError> {
        let mut lines = r.lines().enumerate();
        match lines.next() {
            Some((_, Ok(h))) if h.trim() == "t,x,y,X,Y" => {}
            Some((_, Ok(h))) => return Err(CsvError::Header(h)),
            Some((_, Err(e))) => return Err(CsvError::Io(e.to_string())),
            None => return Err(CsvError::Header(String::new())),
        }
        let mut traj = Trajectory::default();
        for (i, line) in lines {
            let line = line.map_err(|e| CsvError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|_| CsvError::Row(i + 1))?;
            if vals.len() != 5 {
                return Err(CsvError::Row(i + 1));
            }
            if let Some(&prev) = traj.times.last() {
                if vals[0] <= prev {
                    return Err(CsvError::Row(i + 1));
                }
            }
            traj.times.push(vals[0]);
            traj.states.push(State4::new(vals[1], vals[2], vals[3], vals[4]));
        }
        traj.events = detect_sampled_events(&traj.times, &traj.states, lambda);
        Ok(traj)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CsvError {
    #[error("unexpected header {0:?}, expected t,x,y,X,Y")]
    Header(String),
    #[error("malformed row at line {0}")]
    Row(usize),
    #[error("read failure: {0}")]
    Io(String),
}

/// A local extremum of `y` seen during integration.
#[derive(Debug, Clone, Copy)]
struct Extremum {
    t: f64,
    state: State4,
    is_max: bool,
}

/// Prominence of every maximum in an alternating extremum sequence.
fn prominences(ext: &[Extremum]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for (i, e) in ext.iter().enumerate() {
        if !e.is_max {
            continue;
        }
        let h = e.state.y;
        let mut left_min = f64::INFINITY;
        for o in ext[..i].iter().rev() {
            if o.is_max && o.state.y > h {
                break;
            }
            left_min = left_min.min(o.state.y);
        }
        let mut right_min = f64::INFINITY;
        for o in &ext[i + 1..] {
            if o.is_max && o.state.y > h {
                break;
            }
            right_min = right_min.min(o.state.y);
        }
        // an open side with no minimum does not constrain the base
        let base = match (left_min.is_finite(), right_min.is_finite()) {
            (true, true) => left_min.max(right_min),
            (true, false) => left_min,
            (false, true) => right_min,
            (false, false) => continue,
        };
        out.push((i, h - base));
    }
    out
}

fn classify_peaks(ext: &[Extremum], lambda: f64) -> Vec<Event> {
    let threshold = PROMINENCE_FRACTION * 4.0 * lambda.powi(3);
    prominences(ext)
        .into_iter()
        .filter(|&(_, p)| p > threshold)
        .map(|(i, _)| {
            let e = ext[i];
            let kind = if e.state.big_x > 0.0 { EventKind::SurgePeak } else { EventKind::YPulsePeak };
            Event { t: e.t, kind, state: e.state }
        })
        .collect()
}

fn merge_events(mut crossings: Vec<Event>, peaks: Vec<Event>) -> Vec<Event> {
    crossings.extend(peaks);
    crossings.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
    crossings
}

/// Event detection on sampled data (linear interpolation for crossings,
/// sample maxima for peaks).
pub fn detect_sampled_events(times: &[f64], states: &[State4], lambda: f64) -> Vec<Event> {
    let mut crossings = Vec::new();
    let mut ext = Vec::new();
    for i in 1..times.len() {
        let (a, b) = (states[i - 1], states[i]);
        if (a.big_x < 0.0) != (b.big_x < 0.0) && a.big_x != b.big_x {
            let w = a.big_x / (a.big_x - b.big_x);
            let t = times[i - 1] + w * (times[i] - times[i - 1]);
            let lerp = |u: f64, v: f64| u + w * (v - u);
            let s = State4::new(lerp(a.x, b.x), lerp(a.y, b.y), 0.0, lerp(a.big_y, b.big_y));
            let kind = if b.big_x >= 0.0 { EventKind::XUpCross } else { EventKind::XDownCross };
            crossings.push(Event { t, kind, state: s });
        }
        if i + 1 < times.len() {
            let c = states[i + 1];
            if b.y > a.y && b.y >= c.y {
                ext.push(Extremum { t: times[i], state: b, is_max: true });
            } else if b.y < a.y && b.y <= c.y {
                ext.push(Extremum { t: times[i], state: b, is_max: false });
            }
        }
    }
    merge_events(crossings, classify_peaks(&ext, lambda))
}

fn to_state(system: System, y: &[f64; 4]) -> State4 {
    match system {
        System::Full4 => State4::from_array(*y),
        System::Regulator2 => State4::new(0.0, 0.0, y[2], y[3]),
    }
}

/// Integrates from `s0` at `t = 0` to `t_end`.
///
/// For [`System::Regulator2`] only the `X, Y` components of `s0` are used and
/// the returned `x, y` components are zero.
pub fn integrate(system: System, p: &ReducedParams, s0: State4, t_end: f64, opts: &IntegrateOptions) -> Result<Trajectory, IntegrationError> {
    if !(opts.tol > 0.0) {
        return Err(IntegrationError::InvalidInput("tol must be positive"));
    }
    if !(t_end >= 0.0) {
        return Err(IntegrationError::InvalidInput("t_end must be non-negative"));
    }
    if let Some(dt) = opts.sample_dt {
        if !(dt > 0.0) {
            return Err(IntegrationError::InvalidInput("sample_dt must be positive"));
        }
    }
    if !s0.is_finite() {
        return Err(IntegrationError::NonFinite { t: 0.0 });
    }
    let mut traj = Trajectory::default();
    if t_end == 0.0 {
        return Ok(traj);
    }
    let p = *p;
    let step_opts = StepOptions { rtol: opts.tol, atol: opts.tol, h_max: f64::INFINITY, max_steps: opts.max_steps };
    let y0 = match system {
        System::Full4 => s0.to_array(),
        System::Regulator2 => [0.0, 0.0, s0.big_x, s0.big_y],
    };
    let rhs = move |_t: f64, y: &[f64; 4]| -> [f64; 4] {
        match system {
            System::Full4 => field4(&State4::from_array(*y), &p).to_array(),
            System::Regulator2 => {
                let d = field4(&State4::new(0.0, 0.0, y[2], y[3]), &p);
                [0.0, 0.0, d.big_x, d.big_y]
            }
        }
    };
    let mut stepper = Stepper::new(rhs, 0.0, y0, step_opts)?;

    let big_x = |y: &[f64; 4]| y[2];
    let ydot = |y: &[f64; 4]| p.a0 * y[0] + p.a1 * y[1] + p.a2 + p.c * y[2];

    let mut crossings = Vec::new();
    let mut ext = Vec::new();
    traj.times.push(0.0);
    traj.states.push(to_state(system, &y0));
    let mut next_sample = 1usize;

    while stepper.t() < t_end {
        let st = stepper.step(t_end)?;
        let (ya, yb) = (st.y0, st.y1);
        if !yb.iter().all(|v| v.is_finite()) {
            return Err(IntegrationError::NonFinite { t: st.t1() });
        }
        let (xa, xb) = (big_x(&ya), big_x(&yb));
        if (xa < 0.0) != (xb < 0.0) {
            let (t, s) = st.locate(&big_x, st.t0, st.t1());
            let kind = if xb >= 0.0 { EventKind::XUpCross } else { EventKind::XDownCross };
            crossings.push(Event { t, kind, state: to_state(system, &s) });
        }
        if system == System::Full4 {
            let (da, db) = (ydot(&ya), ydot(&yb));
            if (da > 0.0) != (db > 0.0) {
                let (t, s) = st.locate(&ydot, st.t0, st.t1());
                ext.push(Extremum { t, state: State4::from_array(s), is_max: da > 0.0 });
            }
        }
        match opts.sample_dt {
            Some(dt) => {
                loop {
                    let ts = next_sample as f64 * dt;
                    if ts > st.t1() || ts > t_end {
                        break;
                    }
                    traj.times.push(ts);
                    traj.states.push(to_state(system, &st.eval(ts)));
                    next_sample += 1;
                }
            }
            None => {
                traj.times.push(st.t1());
                traj.states.push(to_state(system, &yb));
            }
        }
    }
    traj.events = merge_events(crossings, classify_peaks(&ext, p.lambda));
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CycleError {
    #[error("no limit cycle: {0}")]
    NoCycle(String),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convergence {
    /// Section returns agree to `rel_tol`.
    Converged,
    /// Only agree to `slow_tol`.
    SlowConvergence,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleOptions {
    pub tol: f64,
    /// Section abscissa; returns are counted on downward crossings of `X = section_x`.
    pub section_x: f64,
    /// Initial `(X, Y)`; defaults to `(2 mu, -2 mu^3)`.
    pub seed: Option<(f64, f64)>,
    pub discard: usize,
    pub max_returns: usize,
    pub rel_tol: f64,
    pub slow_tol: f64,
    /// `|X|` beyond which the orbit is taken to have escaped past a saddle.
    pub escape: f64,
    /// Time budget for one section return.
    pub max_return_time: f64,
}

impl Default for CycleOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            section_x: 0.0,
            seed: None,
            discard: 3,
            max_returns: 15,
            rel_tol: 1e-8,
            slow_tol: 1e-5,
            escape: 10.0,
            max_return_time: 5_000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitCycleSummary {
    pub period: f64,
    pub t_minus: f64,
    pub t_plus: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub convergence: Convergence,
    /// Relative change of the section `Y` over the last return.
    pub section_residual: f64,
    /// `(X, Y)` on the section (downward crossing).
    pub section_state: (f64, f64),
    /// `(X, Y)` on the upward crossing of `X = section_x`.
    pub up_state: (f64, f64),
    /// Time from the section crossing to the next upward crossing (equals `t_minus` for `section_x = 0`).
    pub time_to_up: f64,
    pub returns: usize,
}

impl LimitCycleSummary {
    pub fn converged(&self) -> bool {
        self.convergence == Convergence::Converged
    }

    pub fn ratio(&self) -> f64 {
        self.t_minus / self.t_plus
    }
}

/// Regulating-system field in slow time.
fn regulator_rhs(p: ReducedParams) -> impl FnMut(f64, &[f64; 2]) -> [f64; 2] {
    move |_t, y| {
        let g = y[0] * (3.0 * p.mu * p.mu - y[0] * y[0]);
        [(-y[1] + g) / p.epsilon, y[0] + p.b1 * y[1] + p.b2]
    }
}

/// Attracting cycle of the regulating system, measured on returns to the
/// section `{X = section_x, dX/dt < 0}`.
pub fn find_limit_cycle(p: &ReducedParams, opts: &CycleOptions) -> Result<LimitCycleSummary, CycleError> {
    if !(p.epsilon > 0.0) {
        return Err(IntegrationError::InvalidInput("epsilon must be positive").into());
    }
    let mu = p.mu;
    let seed = opts.seed.unwrap_or((2.0 * mu, -2.0 * mu.powi(3)));
    let step_opts = StepOptions { rtol: opts.tol, atol: opts.tol, ..StepOptions::default() };
    let pp = *p;
    let mut stepper = Stepper::new(regulator_rhs(pp), 0.0, [seed.0, seed.1], step_opts)?;
    let xs = opts.section_x;
    let sec = move |y: &[f64; 2]| y[0] - xs;
    let xdot = move |y: &[f64; 2]| -y[1] + y[0] * (3.0 * pp.mu * pp.mu - y[0] * y[0]);

    // (time, Y) at section returns
    let mut returns: Vec<(f64, f64)> = Vec::new();
    let mut up: Option<(f64, f64, f64)> = None;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut t_last_return = 0.0;

    loop {
        let st = stepper.step(f64::INFINITY)?;
        let (ya, yb) = (st.y0, st.y1);
        if yb[0].abs() > opts.escape {
            return Err(CycleError::NoCycle(format!("orbit escaped to X = {:.3} at t = {:.3}", yb[0], st.t1())));
        }
        if st.t1() - t_last_return > opts.max_return_time {
            return Err(CycleError::NoCycle(format!("no section return within {} time units", opts.max_return_time)));
        }
        let (da, db) = (xdot(&ya), xdot(&yb));
        if (da > 0.0) != (db > 0.0) {
            let (_, s) = st.locate(&xdot, st.t0, st.t1());
            lo = lo.min(s[0]);
            hi = hi.max(s[0]);
        }
        lo = lo.min(yb[0]);
        hi = hi.max(yb[0]);

        let (ga, gb) = (sec(&ya), sec(&yb));
        if (ga < 0.0) == (gb < 0.0) {
            continue;
        }
        let (t, s) = st.locate(&sec, st.t0, st.t1());
        if gb >= 0.0 {
            up = Some((t, s[0], s[1]));
            continue;
        }
        if let Some(&(t_prev, y_prev)) = returns.last() {
            let residual = ((s[1] - y_prev) / y_prev.abs().max(1e-300)).abs();
            let n = returns.len();
            if n > opts.discard {
                let converged = residual < opts.rel_tol;
                let slow = n >= opts.max_returns && residual < opts.slow_tol;
                if converged || slow {
                    let (tu, xu, yu) = up.ok_or_else(|| CycleError::NoCycle("missing upward crossing".into()))?;
                    let period = t - t_prev;
                    let time_to_up = tu - t_prev;
                    let (t_minus, t_plus) = if xs == 0.0 { (time_to_up, period - time_to_up) } else { (f64::NAN, f64::NAN) };
                    return Ok(LimitCycleSummary {
                        period,
                        t_minus,
                        t_plus,
                        x_min: lo,
                        x_max: hi,
                        convergence: if converged { Convergence::Converged } else { Convergence::SlowConvergence },
                        section_residual: residual,
                        section_state: (s[0], s[1]),
                        up_state: (xu, yu),
                        time_to_up,
                        returns: n,
                    });
                }
                if n >= opts.max_returns {
                    return Err(CycleError::NoCycle(format!("section returns did not settle (residual {residual:.2e})")));
                }
            }
        }
        returns.push((t, s[1]));
        up = None;
        t_last_return = t;
        lo = f64::INFINITY;
        hi = f64::NEG_INFINITY;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ewe() -> ReducedParams {
        ReducedParams::ewe()
    }

    fn q_minus(p: &ReducedParams) -> State4 {
        State4::new(0.0, 0.0, 2.0 * p.mu, -2.0 * p.mu.powi(3))
    }

    #[test]
    fn dense_output_tracks_exact_solution() {
        // harmonic oscillator
        let f = |_t: f64, y: &[f64; 2]| [y[1], -y[0]];
        let opts = StepOptions { rtol: 1e-10, atol: 1e-10, ..StepOptions::default() };
        let mut st = Stepper::new(f, 0.0, [1.0, 0.0], opts).unwrap();
        let mut worst: f64 = 0.0;
        while st.t() < 10.0 {
            let s = st.step(10.0).unwrap();
            for k in 0..=8 {
                let t = s.t0 + s.h * k as f64 / 8.0;
                let y = s.eval(t);
                worst = worst.max((y[0] - t.cos()).abs()).max((y[1] + t.sin()).abs());
            }
        }
        assert!(worst < 1e-8, "{worst}");
        assert!((st.t() - 10.0).abs() < 1e-15);
    }

    #[test]
    fn blow_up_is_reported() {
        let f = |_t: f64, y: &[f64; 1]| [y[0] * y[0]];
        let mut st = Stepper::new(f, 0.0, [1.0], StepOptions::default()).unwrap();
        let err = loop {
            match st.step(2.0) {
                Ok(_) => continue,
                Err(e) => break e,
            }
        };
        assert!(matches!(err, IntegrationError::StiffnessFailure { .. } | IntegrationError::NonFinite { .. }), "{err:?}");
        assert!(st.t() < 1.0 + 1e-6);
    }

    #[test]
    fn rejects_bad_requests() {
        let p = ewe();
        let o = IntegrateOptions { tol: 0.0, ..Default::default() };
        assert!(integrate(System::Full4, &p, State4::default(), 1.0, &o).is_err());
        let bad = State4::new(f64::NAN, 0.0, 0.0, 0.0);
        assert!(matches!(
            integrate(System::Full4, &p, bad, 1.0, &IntegrateOptions::default()),
            Err(IntegrationError::NonFinite { .. })
        ));
        let empty = integrate(System::Full4, &p, State4::default(), 0.0, &IntegrateOptions::default()).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn regulator_mirror_symmetry() {
        let p = ReducedParams { b2: 0.0, b1: 0.1, ..ewe() };
        let tol = 1e-9;
        let o = IntegrateOptions { tol, sample_dt: Some(0.01), ..Default::default() };
        let s0 = State4::new(0.0, 0.0, 1.7, -2.2);
        let a = integrate(System::Regulator2, &p, s0, 3.0, &o).unwrap();
        let b = integrate(System::Regulator2, &p, State4::new(0.0, 0.0, -1.7, 2.2), 3.0, &o).unwrap();
        assert_eq!(a.len(), b.len());
        for (u, v) in a.states.iter().zip(&b.states) {
            assert!((u.big_x + v.big_x).abs() < 10.0 * tol && (u.big_y + v.big_y).abs() < 10.0 * tol);
        }
    }

    #[test]
    fn tolerance_halving_on_slow_stretch() {
        // slow drift along the left branch of the regulator cubic
        let p = ewe();
        let s0 = State4::new(0.0, 0.0, -2.0 * p.mu, 2.0 * p.mu.powi(3));
        let end = |tol: f64| {
            let o = IntegrateOptions { tol, sample_dt: None, ..Default::default() };
            integrate(System::Regulator2, &p, s0, 5.0, &o).unwrap().last_state().unwrap()
        };
        let (a, b) = (end(1e-8), end(5e-9));
        assert!((a.big_x - b.big_x).abs() < 1e-8 && (a.big_y - b.big_y).abs() < 1e-8, "{a:?} {b:?}");
    }

    #[test]
    fn samples_are_uniform_and_increasing() {
        let p = ewe();
        let o = IntegrateOptions { sample_dt: Some(0.01), ..Default::default() };
        let tr = integrate(System::Full4, &p, q_minus(&p), 2.0, &o).unwrap();
        assert_eq!(tr.len(), 201);
        assert_eq!(tr.times.len(), tr.states.len());
        assert!(tr.times.windows(2).all(|w| w[1] > w[0] && (w[1] - w[0] - 0.01).abs() < 1e-12));
    }

    #[test]
    fn full_system_events() {
        let p = ewe();
        let cyc = find_limit_cycle(&p, &CycleOptions::default()).unwrap();
        let tr = integrate(System::Full4, &p, q_minus(&p), 2.0 * cyc.period, &IntegrateOptions::default()).unwrap();
        // crossings at the section and strict alternation
        let mut last = None;
        for e in tr.events.iter().filter(|e| matches!(e.kind, EventKind::XUpCross | EventKind::XDownCross)) {
            assert!(e.state.big_x.abs() < 1e-8, "{e:?}");
            assert_ne!(Some(e.kind), last);
            last = Some(e.kind);
        }
        // starting on the right branch, two periods hold two surges
        assert_eq!(tr.events_of(EventKind::SurgePeak).count(), 2);
        for e in tr.events_of(EventKind::YPulsePeak) {
            assert!(e.state.big_x < 0.0);
            assert!((e.state.y - 2.0 * p.lambda.powi(3)).abs() < 0.1);
        }
        assert!(tr.events_of(EventKind::YPulsePeak).count() > 100);
        assert!(tr.events.windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn csv_round_trip() {
        let p = ewe();
        let o = IntegrateOptions { sample_dt: Some(1.0 / 2880.0), ..Default::default() };
        let tr = integrate(System::Full4, &p, q_minus(&p), 4.0, &o).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(io::Cursor::new(buf), p.lambda).unwrap();
        assert_eq!(back.len(), tr.len());
        for (a, b) in back.states.iter().zip(&tr.states) {
            assert!((a.y - b.y).abs() <= 1e-10 * (1.0 + b.y.abs()));
        }
        let kinds = |t: &Trajectory, k| t.events_of(k).count();
        for k in [EventKind::XDownCross, EventKind::YPulsePeak, EventKind::SurgePeak] {
            assert_eq!(kinds(&back, k), kinds(&tr, k), "{k:?}");
        }
        let mut ev = Vec::new();
        tr.write_events_csv(&mut ev).unwrap();
        let text = String::from_utf8(ev).unwrap();
        assert!(text.starts_with("t,kind\n"));
        assert!(Trajectory::read_csv(io::Cursor::new("t,y\n1,2\n"), p.lambda).is_err());
    }

    #[test]
    fn relaxation_cycle_at_large_epsilon() {
        let p = ewe().with_regulator(0.1, 1.0, 0.1);
        let c = find_limit_cycle(&p, &CycleOptions::default()).unwrap();
        assert!(c.converged());
        assert!(c.x_min < -p.mu && c.x_max > p.mu);
        assert!((c.period - c.t_minus - c.t_plus).abs() < 1e-12);
    }

    #[test]
    fn symmetric_cycle_splits_evenly() {
        let p = ewe().with_regulator(0.1, 0.0, 0.01);
        let c = find_limit_cycle(&p, &CycleOptions::default()).unwrap();
        assert!((c.ratio() - 1.0).abs() < 0.01);
    }

    #[test]
    fn cycle_is_unique_and_tolerance_stable() {
        let p = ewe();
        let base = find_limit_cycle(&p, &CycleOptions::default()).unwrap();
        assert!(base.x_min < -p.mu && base.x_max > p.mu);
        let seeds = [Some((-2.0 * p.mu, 2.0 * p.mu.powi(3))), Some((-1.8, 2.5)), Some((2.5, -4.0))];
        for seed in seeds {
            let c = find_limit_cycle(&p, &CycleOptions { seed, ..Default::default() }).unwrap();
            assert!(((c.period - base.period) / base.period).abs() < 1e-6);
        }
        let fine = find_limit_cycle(&p, &CycleOptions { tol: 1e-9, ..Default::default() }).unwrap();
        assert!(((fine.period - base.period) / base.period).abs() < 1e-6);
    }

    #[test]
    fn left_excursion_shrinks_like_two_thirds_power() {
        let p = ewe();
        let gap = |eps: f64| {
            let c = find_limit_cycle(&p.with_regulator(p.b1, p.b2, eps), &CycleOptions::default()).unwrap();
            -(c.x_min + 2.0 * p.mu)
        };
        let (g2, g3) = (gap(1e-2), gap(1e-3));
        assert!(g2 > 0.0 && g3 > 0.0 && g3 < g2);
        let slope = (g2 / g3).log10();
        assert!((0.55..0.8).contains(&slope), "slope {slope}");
    }

    #[test]
    fn escape_past_saddle_is_no_cycle() {
        // well above the homoclinic line
        let p = ewe().with_regulator(0.3, 1.9, 0.02);
        assert!(matches!(find_limit_cycle(&p, &CycleOptions::default()), Err(CycleError::NoCycle(_))));
    }
}
