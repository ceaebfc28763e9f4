//! Spec and parameter files.

use std::fmt::Write as _;
use std::path::Path;

use pulsesurge::bifurcation::RegionConfig;
use pulsesurge::model::{default_lambda, default_mu, DEFAULT_DELTA};
use pulsesurge::signal::Tolerances;
use pulsesurge::tuner::CycleSpec;
use pulsesurge::ReducedParams;

use crate::kv::{format_number, KeyValues};
use crate::CliError;

const SPEC_KEYS: &[&str] = &[
    "species_name",
    "whole_cycle_days",
    "follicular_days",
    "surge_days",
    "luteal_days",
    "amplitude_ratio",
    "frequency_ratio",
    "end_follicular_pulse_period_minutes",
    "early_luteal_pulse_period_minutes",
    "alpha",
    "eps0",
    "tol_cycle_period",
    "tol_surge_duration",
    "tol_follicular",
    "tol_luteal",
    "tol_amplitude_ratio",
    "tol_frequency_ratio",
    "tol_pulse_period_presurge",
    "tol_pulse_period_luteal",
    "time_unit_minutes_per_unit",
];

const PARAM_KEYS: &[&str] = &[
    "epsilon",
    "delta",
    "a0",
    "a1",
    "a2",
    "c",
    "b1",
    "b2",
    "lambda",
    "mu",
    "days_per_unit",
    "time_unit_minutes_per_unit",
];

/// A cycle specification with its run overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecFile {
    pub species_name: String,
    pub spec: CycleSpec,
    pub region: RegionConfig,
    pub tolerances: Tolerances,
    /// Days per model time unit, when the file fixes it.
    pub days_per_unit: Option<f64>,
}

impl SpecFile {
    pub fn parse(source: &str, text: &str) -> Result<Self, CliError> {
        let kv = KeyValues::parse(source, text)?;
        kv.reject_unknown(SPEC_KEYS)?;
        let spec = CycleSpec {
            whole_cycle_days: kv.required("whole_cycle_days")?,
            follicular_days: kv.required("follicular_days")?,
            surge_days: kv.required("surge_days")?,
            luteal_days: kv.required("luteal_days")?,
            amplitude_ratio: kv.required("amplitude_ratio")?,
            frequency_ratio: kv.required("frequency_ratio")?,
            end_follicular_pulse_period_minutes: kv.number("end_follicular_pulse_period_minutes")?,
            early_luteal_pulse_period_minutes: kv.number("early_luteal_pulse_period_minutes")?,
        };
        spec.validate().map_err(|e| CliError::Parse(format!("{source}: {e}")))?;
        let defaults = RegionConfig::default();
        let region = RegionConfig {
            alpha: kv.number("alpha")?.unwrap_or(defaults.alpha),
            eps0: kv.number("eps0")?.unwrap_or(defaults.eps0),
        };
        region.validate(default_mu()).map_err(|e| CliError::Parse(format!("{source}: {e}")))?;
        let d = Tolerances::default();
        let tol = |key: &str, default: Option<f64>| -> Result<Option<f64>, CliError> {
            match kv.number(key)? {
                Some(t) if t < 0.0 => Err(CliError::Parse(format!("{source}: `{key}` must be non-negative"))),
                Some(t) => Ok(Some(t)),
                None => Ok(default),
            }
        };
        let tolerances = Tolerances {
            cycle_period: tol("tol_cycle_period", d.cycle_period)?,
            surge_duration: tol("tol_surge_duration", d.surge_duration)?,
            follicular: tol("tol_follicular", d.follicular)?,
            luteal: tol("tol_luteal", d.luteal)?,
            amplitude_ratio: tol("tol_amplitude_ratio", d.amplitude_ratio)?,
            frequency_ratio: tol("tol_frequency_ratio", d.frequency_ratio)?,
            pulse_period_presurge: tol("tol_pulse_period_presurge", d.pulse_period_presurge)?,
            pulse_period_luteal: tol("tol_pulse_period_luteal", d.pulse_period_luteal)?,
        };
        Ok(Self {
            species_name: kv.text("species_name").unwrap_or("unnamed").to_string(),
            spec,
            region,
            tolerances,
            days_per_unit: time_unit(&kv, source)?,
        })
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        Self::parse(&path.display().to_string(), &read_text(path)?)
    }
}

/// A parameter set plus the time unit it was tuned for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamsFile {
    pub params: ReducedParams,
    pub days_per_unit: Option<f64>,
}

impl ParamsFile {
    pub fn parse(source: &str, text: &str) -> Result<Self, CliError> {
        let kv = KeyValues::parse(source, text)?;
        kv.reject_unknown(PARAM_KEYS)?;
        let params = ReducedParams {
            epsilon: kv.required("epsilon")?,
            delta: kv.number("delta")?.unwrap_or(DEFAULT_DELTA),
            a0: kv.required("a0")?,
            a1: kv.required("a1")?,
            a2: kv.required("a2")?,
            c: kv.required("c")?,
            b1: kv.required("b1")?,
            b2: kv.required("b2")?,
            lambda: kv.number("lambda")?.unwrap_or_else(default_lambda),
            mu: kv.number("mu")?.unwrap_or_else(default_mu),
        };
        params.validate().map_err(|e| CliError::Parse(format!("{source}: {e}")))?;
        Ok(Self { params, days_per_unit: time_unit(&kv, source)? })
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        Self::parse(&path.display().to_string(), &read_text(path)?)
    }

    pub fn render(&self, header: &str) -> String {
        let p = &self.params;
        let mut s = String::new();
        for line in header.lines() {
            let _ = writeln!(s, "# {line}");
        }
        let mut rows = vec![
            ("epsilon", p.epsilon),
            ("a0", p.a0),
            ("a1", p.a1),
            ("a2", p.a2),
            ("c", p.c),
            ("b1", p.b1),
            ("b2", p.b2),
        ];
        // shape constants only when they differ from the defaults
        for (k, v, d) in [("delta", p.delta, DEFAULT_DELTA), ("lambda", p.lambda, default_lambda()), ("mu", p.mu, default_mu())] {
            if v != d {
                rows.push((k, v));
            }
        }
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {}", format_number(v));
        }
        if let Some(d) = self.days_per_unit {
            let _ = writeln!(s, "days_per_unit = {}", format_number(d));
        }
        s
    }
}

fn time_unit(kv: &KeyValues, source: &str) -> Result<Option<f64>, CliError> {
    let days = kv.number("days_per_unit")?;
    let minutes = kv.number("time_unit_minutes_per_unit")?;
    let dpu = match (days, minutes) {
        (Some(_), Some(_)) => {
            return Err(CliError::Parse(format!("{source}: give either `days_per_unit` or `time_unit_minutes_per_unit`")))
        }
        (Some(d), None) => Some(d),
        (None, Some(m)) => Some(m / 1440.0),
        (None, None) => None,
    };
    match dpu {
        Some(d) if !(d > 0.0) => Err(CliError::Parse(format!("{source}: the time unit must be positive"))),
        other => Ok(other),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
