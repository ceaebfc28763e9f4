//! Pulse, surge and phase features of a simulated secretion signal.
//!
//! All durations in [`SignalFeatures`] are in model time units. Conversion to
//! days happens in [`FeatureReport`] and [`validate_against_spec`] through an
//! explicit `days_per_unit` factor.

use serde::Serialize;
use thiserror::Error;

use crate::integrator::{EventKind, Trajectory};
use crate::tuner::CycleSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("no complete surge found")]
    NoSurgeFound,
    #[error("no pulses found")]
    NoPulsesFound,
    #[error("need at least one complete cycle between two surges, found {surges} surge(s)")]
    InsufficientCycles { surges: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pulse {
    pub peak_time: f64,
    pub peak_value: f64,
    /// Lowest sample between the previous peak (or phase start) and this one.
    pub trough_value: f64,
}

impl Pulse {
    pub fn peak_to_trough(&self) -> f64 {
        self.peak_value - self.trough_value
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Surge {
    pub start: f64,
    pub end: f64,
    pub peak_time: f64,
    pub peak_value: f64,
}

impl Surge {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Measurements for one surge followed by one pulsatility phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleFeatures {
    pub surge_start: f64,
    pub surge_end: f64,
    pub next_surge_start: f64,
    /// Follicular onset located by the frequency knee.
    pub onset: f64,
    pub pulse_count: usize,
    pub period: f64,
    pub surge_duration: f64,
    pub pulsatility_duration: f64,
    pub luteal_duration: f64,
    pub follicular_duration: f64,
    /// Peak of the surge closing this cycle over the mean pulse peak.
    pub amplitude_ratio: f64,
    /// Same surge peak over the mean pulse peak-to-trough amplitude.
    pub amplitude_ratio_peak_to_trough: f64,
    pub plateau_frequency: f64,
    pub max_frequency: f64,
    /// Max instantaneous frequency over the plateau.
    pub frequency_ratio: f64,
    /// Mean follicular frequency over mean luteal frequency.
    pub frequency_ratio_mean: f64,
    /// Shortest inter-pulse interval.
    pub pulse_period_presurge: f64,
    /// Inverse of the plateau frequency.
    pub pulse_period_luteal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalFeatures {
    pub pulses: Vec<Pulse>,
    pub surges: Vec<Surge>,
    pub cycles: Vec<CycleFeatures>,
    pub cycle_period: f64,
    pub surge_duration: f64,
    pub pulsatility_duration: f64,
    pub luteal_duration: f64,
    pub follicular_duration: f64,
    pub amplitude_ratio: f64,
    pub amplitude_ratio_peak_to_trough: f64,
    pub frequency_ratio: f64,
    pub frequency_ratio_mean: f64,
    pub pulse_period_presurge: f64,
    pub pulse_period_luteal: f64,
    /// 5th percentile of `y`.
    pub baseline: f64,
    /// `y` level separating surges from pulses in signal-only mode.
    pub surge_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureOptions {
    /// Phase boundaries from `X` sign changes instead of the `y` threshold.
    pub use_x: bool,
    /// Target frequency ratio for the knee threshold; the measured ratio caps it.
    pub frequency_target: Option<f64>,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self { use_x: true, frequency_target: None }
    }
}

fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(v.len() - 1);
    v[i] + (pos - i as f64) * (v[j] - v[i])
}

fn median(values: &[f64]) -> f64 {
    percentile(values, 0.5)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Index range of samples with `t` in `[a, b]`.
fn sample_range(times: &[f64], a: f64, b: f64) -> std::ops::Range<usize> {
    let lo = times.partition_point(|&t| t < a);
    let hi = times.partition_point(|&t| t <= b);
    lo..hi.max(lo)
}

fn surge_peak(traj: &Trajectory, start: f64, end: f64) -> (f64, f64) {
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for i in sample_range(&traj.times, start, end) {
        if traj.states[i].y > best.1 {
            best = (traj.times[i], traj.states[i].y);
        }
    }
    for e in traj.events_of(EventKind::SurgePeak).chain(traj.events_of(EventKind::YPulsePeak)) {
        if e.t >= start && e.t <= end && e.state.y > best.1 {
            best = (e.t, e.state.y);
        }
    }
    best
}

fn surges_from_x(traj: &Trajectory) -> Vec<Surge> {
    let mut out = Vec::new();
    let mut start = None;
    for e in &traj.events {
        match e.kind {
            EventKind::XUpCross => start = Some(e.t),
            EventKind::XDownCross => {
                if let Some(s) = start.take() {
                    let (peak_time, peak_value) = surge_peak(traj, s, e.t);
                    out.push(Surge { start: s, end: e.t, peak_time, peak_value });
                }
            }
            _ => {}
        }
    }
    out
}

fn surges_from_threshold(traj: &Trajectory, threshold: f64) -> Vec<Surge> {
    let (t, s) = (&traj.times, &traj.states);
    let mut out = Vec::new();
    let mut start = None;
    for i in 1..t.len() {
        let (ya, yb) = (s[i - 1].y, s[i].y);
        let cross = |i: usize| {
            let w = (threshold - ya) / (yb - ya);
            t[i - 1] + w * (t[i] - t[i - 1])
        };
        if ya <= threshold && yb > threshold {
            start = Some(cross(i));
        } else if ya > threshold && yb <= threshold {
            if let Some(st) = start.take() {
                let end = cross(i);
                let (peak_time, peak_value) = surge_peak(traj, st, end);
                out.push(Surge { start: st, end, peak_time, peak_value });
            }
        }
    }
    out
}

fn collect_pulses(traj: &Trajectory, surges: &[Surge], use_x: bool) -> Vec<Pulse> {
    let inside = |t: f64| surges.iter().any(|s| t >= s.start && t <= s.end);
    let mut peaks: Vec<(f64, f64)> = traj
        .events
        .iter()
        .filter(|e| match e.kind {
            EventKind::YPulsePeak => true,
            EventKind::SurgePeak => !use_x,
            _ => false,
        })
        .filter(|e| !inside(e.t))
        .map(|e| (e.t, e.state.y))
        .collect();
    peaks.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let t0 = traj.times.first().copied().unwrap_or(0.0);
    let mut out = Vec::with_capacity(peaks.len());
    let mut prev = t0;
    for (t, y) in peaks {
        let from = surges.iter().filter(|s| s.end <= t).map(|s| s.end).fold(prev, f64::max);
        let mut trough = f64::INFINITY;
        for i in sample_range(&traj.times, from, t) {
            trough = trough.min(traj.states[i].y);
        }
        if !trough.is_finite() {
            trough = y;
        }
        out.push(Pulse { peak_time: t, peak_value: y, trough_value: trough });
        prev = t;
    }
    out
}

fn cycle_features(surge: &Surge, next: &Surge, pulses: &[Pulse], target: Option<f64>) -> Option<CycleFeatures> {
    let inner: Vec<&Pulse> = pulses.iter().filter(|p| p.peak_time > surge.end && p.peak_time < next.start).collect();
    if inner.len() < 5 {
        return None;
    }
    let intervals: Vec<(f64, f64)> = inner
        .windows(2)
        .map(|w| (0.5 * (w[0].peak_time + w[1].peak_time), w[1].peak_time - w[0].peak_time))
        .collect();
    let half = surge.end + 0.5 * (next.start - surge.end);
    let early: Vec<f64> = intervals.iter().filter(|(m, _)| *m < half).map(|(_, d)| 1.0 / d).collect();
    if early.is_empty() {
        return None;
    }
    let plateau = median(&early);
    // the frequency peaks a few pulses before the surge, then sags slightly
    let max_freq = intervals.iter().map(|(_, d)| 1.0 / d).fold(f64::NEG_INFINITY, f64::max);
    let measured = max_freq / plateau;
    let knee_ratio = target.map_or(measured, |t| t.min(measured)).max(1.0);
    let threshold = plateau * knee_ratio.sqrt();

    // first interval after which every later frequency clears the threshold
    let mut k = intervals.len();
    while k > 0 && 1.0 / intervals[k - 1].1 > threshold {
        k -= 1;
    }
    let onset = if k < intervals.len() { intervals[k].0 } else { next.start };

    let luteal_f: Vec<f64> = intervals.iter().filter(|(m, _)| *m < onset).map(|(_, d)| 1.0 / d).collect();
    let foll_f: Vec<f64> = intervals.iter().filter(|(m, _)| *m >= onset).map(|(_, d)| 1.0 / d).collect();
    let frequency_ratio_mean =
        if luteal_f.is_empty() || foll_f.is_empty() { f64::NAN } else { mean(&foll_f) / mean(&luteal_f) };

    let peaks: Vec<f64> = inner.iter().map(|p| p.peak_value).collect();
    let ptt: Vec<f64> = inner.iter().map(|p| p.peak_to_trough()).collect();
    Some(CycleFeatures {
        surge_start: surge.start,
        surge_end: surge.end,
        next_surge_start: next.start,
        onset,
        pulse_count: inner.len(),
        period: next.start - surge.start,
        surge_duration: surge.duration(),
        pulsatility_duration: next.start - surge.end,
        luteal_duration: onset - surge.end,
        follicular_duration: next.start - onset,
        amplitude_ratio: next.peak_value / mean(&peaks),
        amplitude_ratio_peak_to_trough: next.peak_value / mean(&ptt),
        plateau_frequency: plateau,
        max_frequency: max_freq,
        frequency_ratio: measured,
        frequency_ratio_mean,
        pulse_period_presurge: 1.0 / max_freq,
        pulse_period_luteal: 1.0 / plateau,
    })
}

/// Extracts pulses, surges and per-cycle phase features.
///
/// A cycle runs from one complete surge to the start of the next one; the
/// headline values average every complete cycle in the trajectory.
pub fn extract_features(traj: &Trajectory, opts: &FeatureOptions) -> Result<SignalFeatures, SignalError> {
    let ys: Vec<f64> = traj.states.iter().map(|s| s.y).collect();
    let baseline = percentile(&ys, 0.05);

    let (surges, surge_threshold) = if opts.use_x {
        (surges_from_x(traj), None)
    } else {
        let candidates = collect_pulses(traj, &[], false);
        if candidates.is_empty() {
            return Err(SignalError::NoPulsesFound);
        }
        // the few surge peaks barely move a median over hundreds of pulses
        let ptt: Vec<f64> = candidates.iter().map(Pulse::peak_to_trough).collect();
        let threshold = baseline + 3.0 * median(&ptt);
        (surges_from_threshold(traj, threshold), Some(threshold))
    };
    if surges.is_empty() {
        return Err(SignalError::NoSurgeFound);
    }
    let pulses = collect_pulses(traj, &surges, opts.use_x);
    if pulses.is_empty() {
        return Err(SignalError::NoPulsesFound);
    }
    let cycles: Vec<CycleFeatures> = surges
        .windows(2)
        .filter_map(|w| cycle_features(&w[0], &w[1], &pulses, opts.frequency_target))
        .collect();
    if cycles.is_empty() {
        return Err(SignalError::InsufficientCycles { surges: surges.len() });
    }
    let avg = |f: fn(&CycleFeatures) -> f64| mean(&cycles.iter().map(f).collect::<Vec<_>>());
    Ok(SignalFeatures {
        cycle_period: avg(|c| c.period),
        surge_duration: avg(|c| c.surge_duration),
        pulsatility_duration: avg(|c| c.pulsatility_duration),
        luteal_duration: avg(|c| c.luteal_duration),
        follicular_duration: avg(|c| c.follicular_duration),
        amplitude_ratio: avg(|c| c.amplitude_ratio),
        amplitude_ratio_peak_to_trough: avg(|c| c.amplitude_ratio_peak_to_trough),
        frequency_ratio: avg(|c| c.frequency_ratio),
        frequency_ratio_mean: avg(|c| c.frequency_ratio_mean),
        pulse_period_presurge: avg(|c| c.pulse_period_presurge),
        pulse_period_luteal: avg(|c| c.pulse_period_luteal),
        pulses,
        surges,
        cycles,
        baseline,
        surge_threshold,
    })
}

/// Headline features in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeatureReport {
    pub cycle_period_days: f64,
    pub surge_duration_days: f64,
    pub follicular_days: f64,
    pub luteal_days: f64,
    pub amplitude_ratio: f64,
    pub frequency_ratio: f64,
    pub pulse_period_presurge_minutes: f64,
    pub pulse_period_luteal_minutes: f64,
    pub amplitude_ratio_peak_to_trough: f64,
    pub frequency_ratio_mean: f64,
    pub days_per_unit: f64,
    pub cycles: usize,
}

impl FeatureReport {
    pub fn new(f: &SignalFeatures, days_per_unit: f64) -> Self {
        let minutes = days_per_unit * 1440.0;
        Self {
            cycle_period_days: f.cycle_period * days_per_unit,
            surge_duration_days: f.surge_duration * days_per_unit,
            follicular_days: f.follicular_duration * days_per_unit,
            luteal_days: f.luteal_duration * days_per_unit,
            amplitude_ratio: f.amplitude_ratio,
            frequency_ratio: f.frequency_ratio,
            pulse_period_presurge_minutes: f.pulse_period_presurge * minutes,
            pulse_period_luteal_minutes: f.pulse_period_luteal * minutes,
            amplitude_ratio_peak_to_trough: f.amplitude_ratio_peak_to_trough,
            frequency_ratio_mean: f.frequency_ratio_mean,
            days_per_unit,
            cycles: f.cycles.len(),
        }
    }
}

/// Relative tolerance per field; `None` skips the field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub cycle_period: Option<f64>,
    pub surge_duration: Option<f64>,
    pub follicular: Option<f64>,
    pub luteal: Option<f64>,
    pub amplitude_ratio: Option<f64>,
    pub frequency_ratio: Option<f64>,
    pub pulse_period_presurge: Option<f64>,
    pub pulse_period_luteal: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            cycle_period: Some(0.05),
            surge_duration: Some(0.10),
            follicular: Some(0.15),
            luteal: None,
            amplitude_ratio: Some(0.20),
            frequency_ratio: None,
            pulse_period_presurge: Some(0.15),
            pulse_period_luteal: Some(0.20),
        }
    }
}

impl Tolerances {
    /// Every field checked with the same tolerance.
    pub fn uniform(tol: f64) -> Self {
        Self {
            cycle_period: Some(tol),
            surge_duration: Some(tol),
            follicular: Some(tol),
            luteal: Some(tol),
            amplitude_ratio: Some(tol),
            frequency_ratio: Some(tol),
            pulse_period_presurge: Some(tol),
            pulse_period_luteal: Some(tol),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldCheck {
    pub field: &'static str,
    pub target: f64,
    pub measured: f64,
    pub rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<FieldCheck>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn check(&self, field: &str) -> Option<&FieldCheck> {
        self.checks.iter().find(|c| c.field == field)
    }

    pub fn failures(&self) -> impl Iterator<Item = &FieldCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Compares features against a spec after converting time with `days_per_unit`.
pub fn validate_against_spec(f: &SignalFeatures, spec: &CycleSpec, tol: &Tolerances, days_per_unit: f64) -> ValidationReport {
    let r = FeatureReport::new(f, days_per_unit);
    let rows: [(&'static str, Option<f64>, f64, Option<f64>); 8] = [
        ("cycle_period_days", Some(spec.whole_cycle_days), r.cycle_period_days, tol.cycle_period),
        ("surge_duration_days", Some(spec.surge_days), r.surge_duration_days, tol.surge_duration),
        ("follicular_days", Some(spec.follicular_days), r.follicular_days, tol.follicular),
        ("luteal_days", Some(spec.luteal_days), r.luteal_days, tol.luteal),
        ("amplitude_ratio", Some(spec.amplitude_ratio), r.amplitude_ratio, tol.amplitude_ratio),
        ("frequency_ratio", Some(spec.frequency_ratio), r.frequency_ratio, tol.frequency_ratio),
        (
            "pulse_period_presurge_minutes",
            spec.end_follicular_pulse_period_minutes,
            r.pulse_period_presurge_minutes,
            tol.pulse_period_presurge,
        ),
        (
            "pulse_period_luteal_minutes",
            spec.early_luteal_pulse_period_minutes,
            r.pulse_period_luteal_minutes,
            tol.pulse_period_luteal,
        ),
    ];
    let checks: Vec<FieldCheck> = rows
        .into_iter()
        .filter_map(|(field, target, measured, tolerance)| {
            let (target, tolerance) = (target?, tolerance?);
            let rel_error = (measured - target).abs() / target.abs();
            Some(FieldCheck { field, target, measured, rel_error, tolerance, pass: rel_error <= tolerance })
        })
        .collect();
    let pass = checks.iter().all(|c| c.pass);
    ValidationReport { checks, pass }
}
