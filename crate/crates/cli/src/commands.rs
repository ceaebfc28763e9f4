//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use pulsesurge::bifurcation::{homoclinic0_b2, homoclinic_b2_numeric, hopf_b2, secub1_window, HomoclinicOptions, RegionConfig};
use pulsesurge::foliation::{sample_leaf, FoliationError, LeafOptions};
use pulsesurge::integrator::{integrate, IntegrateOptions, System, Trajectory};
use pulsesurge::model::{default_lambda, default_mu};
use pulsesurge::signal::{extract_features, validate_against_spec, FeatureOptions, FeatureReport, SignalFeatures, ValidationReport};
use pulsesurge::tuner::{self, post_surge_state, simulate_cycles, t_min, CycleSpec, TuneConfig, TuneError};
use pulsesurge::{ReducedParams, State4};
use serde::Serialize;

use crate::files::{ParamsFile, SpecFile};
use crate::CliError;

/// Fewest output samples per shortest pulse period.
pub const MIN_SAMPLES_PER_PULSE: f64 = 20.0;

/// Length of the checking simulations, in regulator periods.
pub const CONFIRMATION_CYCLES: f64 = 3.2;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn tune_error(e: TuneError) -> CliError {
    if e.is_unreachable() {
        CliError::Unreachable { name: e.name(), message: e.to_string() }
    } else if matches!(e, TuneError::Spec(_)) {
        CliError::Parse(e.to_string())
    } else {
        CliError::Numeric(format!("{}: {e}", e.name()))
    }
}

fn write_trajectory(traj: &Trajectory, dir: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    let (tp, ep) = (dir.join("trajectory.csv"), dir.join("events.csv"));
    let mut w = create(&tp)?;
    traj.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(&tp, e))?;
    let mut w = create(&ep)?;
    traj.write_events_csv(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(&ep, e))?;
    Ok((tp, ep))
}

/// Starting state: just after a surge when the regulator cycles, otherwise
/// both subsystems on their left branches.
fn start_state(p: &ReducedParams) -> State4 {
    post_surge_state(p).unwrap_or_else(|_| {
        let (x, big_x) = (-1.5 * p.lambda, -1.5 * p.mu);
        State4::new(x, p.f().eval(x), big_x, p.g().eval(big_x))
    })
}

fn trajectory_script(days_per_unit: f64) -> String {
    format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set xlabel 'time (days)'\n\
         set multiplot layout 2,1\n\
         set ylabel 'y'\n\
         plot 'trajectory.csv' using ($1*{days_per_unit}):3 with lines\n\
         set ylabel 'X'\n\
         plot 'trajectory.csv' using ($1*{days_per_unit}):4 with lines\n\
         unset multiplot\n"
    )
}

pub fn simulate(params: &Path, days: f64, out: &Path, tol: f64, samples_per_day: f64, gnuplot: bool) -> Result<(), CliError> {
    let pf = ParamsFile::read(params)?;
    let p = pf.params;
    if !(days >= 0.0 && days.is_finite()) {
        return Err(CliError::Parse(format!("--days must be a non-negative number, got {days}")));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(CliError::Parse(format!("--tol must lie in (0, 1), got {tol}")));
    }
    let dpu = pf.days_per_unit.unwrap_or(1.0);
    let shortest_pulse_days = t_min(&p) * dpu;
    if !(samples_per_day * shortest_pulse_days >= MIN_SAMPLES_PER_PULSE) {
        return Err(CliError::Parse(format!(
            "{samples_per_day} samples per day leaves fewer than {MIN_SAMPLES_PER_PULSE} samples in the shortest pulse ({:.1} min)",
            shortest_pulse_days * 1440.0
        )));
    }
    ensure_dir(out)?;
    let opts = IntegrateOptions { tol, sample_dt: Some(1.0 / (samples_per_day * dpu)), ..IntegrateOptions::default() };
    let traj = if days == 0.0 {
        Trajectory::default()
    } else {
        integrate(System::Full4, &p, start_state(&p), days / dpu, &opts).map_err(|e| CliError::Numeric(e.to_string()))?
    };
    let (tp, ep) = write_trajectory(&traj, out)?;
    if gnuplot {
        write_file(&out.join("trajectory.gp"), &trajectory_script(dpu))?;
    }
    println!("{} samples, {} events: {}, {}", traj.len(), traj.events.len(), tp.display(), ep.display());
    Ok(())
}

#[derive(Serialize)]
struct TuneOutput<'a> {
    species_name: &'a str,
    spec: &'a CycleSpec,
    days_per_unit: f64,
    params: &'a ReducedParams,
    diagnostics: &'a tuner::TuneDiagnostics,
    constraint_report: &'a tuner::ConstraintReport,
    features: FeatureReport,
    validation: &'a ValidationReport,
}

/// Confirmation run: simulate a few cycles and measure the signal.
fn confirm(p: &ReducedParams, spec: &CycleSpec, tol: f64) -> Result<(Trajectory, SignalFeatures), CliError> {
    let (traj, _) = simulate_cycles(p, CONFIRMATION_CYCLES, tol, TuneConfig::default().sample_dt).map_err(tune_error)?;
    let opts = FeatureOptions { frequency_target: Some(spec.measured_frequency_ratio()), ..FeatureOptions::default() };
    let feats = extract_features(&traj, &opts).map_err(|e| CliError::Numeric(e.to_string()))?;
    Ok((traj, feats))
}

pub fn tune(spec_path: &Path, out: &Path, tol: f64, gnuplot: bool) -> Result<(), CliError> {
    let sf = SpecFile::read(spec_path)?;
    if sf.days_per_unit.is_some() {
        eprintln!("pulsesurge: tune derives the time unit from the cycle length; the spec's time unit is ignored");
    }
    let cfg = TuneConfig { region: sf.region, integration_tol: tol, ..TuneConfig::default() };
    let res = tuner::tune(&sf.spec, &cfg).map_err(tune_error)?;
    ensure_dir(out)?;
    let pf = ParamsFile { params: res.params, days_per_unit: Some(res.days_per_unit) };
    write_file(&out.join("params.txt"), &pf.render(&format!("tuned for {}", sf.species_name)))?;

    let (traj, feats) = confirm(&res.params, &sf.spec, tol)?;
    let validation = validate_against_spec(&feats, &sf.spec, &sf.tolerances, res.days_per_unit);
    let report = TuneOutput {
        species_name: &sf.species_name,
        spec: &sf.spec,
        days_per_unit: res.days_per_unit,
        params: &res.params,
        diagnostics: &res.diagnostics,
        constraint_report: &res.constraint_report,
        features: FeatureReport::new(&feats, res.days_per_unit),
        validation: &validation,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Numeric(e.to_string()))?;
    write_file(&out.join("diagnostics.json"), &json)?;
    if gnuplot {
        write_trajectory(&traj, out)?;
        write_file(&out.join("trajectory.gp"), &trajectory_script(res.days_per_unit))?;
    }
    println!("{}", pf.render(""));
    println!("confirmation: {}", if validation.pass { "pass" } else { "FAIL" });
    for c in validation.failures() {
        eprintln!("  {}: target {} measured {:.4} (error {:.3} > {})", c.field, c.target, c.measured, c.rel_error, c.tolerance);
    }
    Ok(())
}

pub fn analyze(input: &Path, params: Option<&Path>, out: Option<&Path>, ratio: Option<f64>, signal_only: bool) -> Result<(), CliError> {
    let pf = params.map(ParamsFile::read).transpose()?;
    let lambda = pf.map_or_else(default_lambda, |f| f.params.lambda);
    let dpu = pf.and_then(|f| f.days_per_unit).unwrap_or(1.0);
    let file = fs::File::open(input).map_err(|e| io_err(input, e))?;
    let traj = Trajectory::read_csv(BufReader::new(file), lambda).map_err(|e| CliError::Parse(format!("{}: {e}", input.display())))?;
    let opts = FeatureOptions { use_x: !signal_only, frequency_target: ratio };
    let feats = extract_features(&traj, &opts).map_err(|e| CliError::Numeric(e.to_string()))?;
    let json = serde_json::to_string_pretty(&FeatureReport::new(&feats, dpu)).map_err(|e| CliError::Numeric(e.to_string()))?;
    match out {
        Some(dir) => {
            ensure_dir(dir)?;
            write_file(&dir.join("features.json"), &json)?;
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn emit_csv(out: Option<&Path>, name: &str, body: &str, script: Option<String>) -> Result<(), CliError> {
    match out {
        Some(dir) => {
            ensure_dir(dir)?;
            write_file(&dir.join(format!("{name}.csv")), body)?;
            if let Some(s) = script {
                write_file(&dir.join(format!("{name}.gp")), &s)?;
            }
        }
        None => print!("{body}"),
    }
    Ok(())
}

fn check_eps(eps: f64, region: &RegionConfig) -> Result<(), CliError> {
    if eps > 0.0 && eps < region.eps0 {
        Ok(())
    } else {
        Err(CliError::Parse(format!("--eps must lie in (0, {}), got {eps}", region.eps0)))
    }
}

pub fn bifurcation_map(eps: f64, points: usize, out: Option<&Path>, gnuplot: bool) -> Result<(), CliError> {
    let region = RegionConfig::default();
    check_eps(eps, &region)?;
    if points == 0 {
        return Err(CliError::Parse("--points must be positive".into()));
    }
    let mu = default_mu();
    let template = ReducedParams::ewe();
    let (lo, hi) = secub1_window(mu, region.alpha);
    let mut body = String::from("b1,hopf_b2,homoclinic0_b2,homoclinic_numeric_b2\n");
    for k in 0..points {
        let b1 = (k as f64 + 0.5) / points as f64 / (mu * mu);
        let numeric = if b1 > lo && b1 < hi {
            homoclinic_b2_numeric(&template, b1, eps, &region, &HomoclinicOptions::default()).ok().map(|h| h.b2)
        } else {
            None
        };
        let _ = writeln!(body, "{b1},{},{},{}", hopf_b2(b1, mu), homoclinic0_b2(b1, mu), opt(numeric));
    }
    let script = gnuplot.then(|| {
        "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'b1'\nset ylabel 'b2'\n\
         plot 'bifurcation.csv' using 1:2 with lines, '' using 1:3 with lines, '' using 1:4 with points\n"
            .to_string()
    });
    emit_csv(out, "bifurcation", &body, script)
}

pub fn leaf(ratio: f64, eps: Option<f64>, points: usize, out: Option<&Path>, gnuplot: bool) -> Result<(), CliError> {
    let region = RegionConfig::default();
    if !(ratio > 1.0 && ratio.is_finite()) {
        return Err(CliError::Parse(format!("--ratio must exceed 1, got {ratio}")));
    }
    if let Some(e) = eps {
        check_eps(e, &region)?;
    }
    if points == 0 {
        return Err(CliError::Parse("--points must be positive".into()));
    }
    let rows = sample_leaf(&ReducedParams::ewe(), ratio, eps, points, &region, &LeafOptions::default()).map_err(|e| match e {
        FoliationError::WindowViolation { .. } | FoliationError::AboveCeiling { .. } => {
            CliError::Unreachable { name: "LeafWindow", message: e.to_string() }
        }
        other => CliError::Numeric(other.to_string()),
    })?;
    let mut body = String::from("b1,b2_zero_order,b2_simulated,achieved_ratio\n");
    for r in &rows {
        let _ = writeln!(body, "{},{},{},{}", r.b1, r.b2_zero_order, opt(r.b2_simulated), opt(r.achieved_ratio));
    }
    let script = gnuplot.then(|| {
        "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'b1'\nset ylabel 'b2'\n\
         plot 'leaf.csv' using 1:2 with lines, '' using 1:3 with points\n"
            .to_string()
    });
    emit_csv(out, "leaf", &body, script)
}

#[derive(Serialize)]
struct ValidateOutput<'a> {
    species_name: &'a str,
    days_per_unit: f64,
    features: FeatureReport,
    validation: &'a ValidationReport,
}

pub fn validate(spec_path: &Path, params: &Path, days: Option<f64>, tol: f64, out: Option<&Path>) -> Result<(), CliError> {
    let sf = SpecFile::read(spec_path)?;
    let pf = ParamsFile::read(params)?;
    let p = pf.params;
    let dpu = sf.days_per_unit.or(pf.days_per_unit).unwrap_or(1.0);
    let feats = match days {
        None => confirm(&p, &sf.spec, tol)?.1,
        Some(d) => {
            let opts = IntegrateOptions { tol, ..IntegrateOptions::default() };
            let traj = integrate(System::Full4, &p, start_state(&p), d / dpu, &opts).map_err(|e| CliError::Numeric(e.to_string()))?;
            let fo = FeatureOptions { frequency_target: Some(sf.spec.measured_frequency_ratio()), ..FeatureOptions::default() };
            extract_features(&traj, &fo).map_err(|e| CliError::Numeric(e.to_string()))?
        }
    };
    let validation = validate_against_spec(&feats, &sf.spec, &sf.tolerances, dpu);
    let report = ValidateOutput { species_name: &sf.species_name, days_per_unit: dpu, features: FeatureReport::new(&feats, dpu), validation: &validation };
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Numeric(e.to_string()))?;
    match out {
        Some(dir) => {
            ensure_dir(dir)?;
            write_file(&dir.join("validation.json"), &json)?;
        }
        None => println!("{json}"),
    }
    if validation.pass {
        Ok(())
    } else {
        let names: Vec<_> = validation.failures().map(|c| c.field).collect();
        Err(CliError::ValidationFailed(names.join(", ")))
    }
}
