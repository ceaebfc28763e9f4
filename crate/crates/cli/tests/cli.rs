use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pulsesurge_cli::files::ParamsFile;

const TABLE2: &str = "epsilon = 0.02\na0 = 0.52\na1 = 0.011\na2 = 1.14\nc = 0.7\nb1 = 0.246\nb2 = 1.5103\n";
const TABLE4: &str = "epsilon = 0.018\na0 = 0.7\na1 = 0.013\na2 = 1.0\nc = 0.67\nb1 = 0.187\nb2 = 1.704\n";
// regulator periods of the two published sets, in model units
const TABLE2_PERIOD: f64 = 51.1532;
const TABLE4_PERIOD: f64 = 53.92;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pulsesurge"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn specs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("specs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<Option<f64>>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect::<Vec<_>>();
    let rows = lines
        .map(|l| l.split(',').map(|c| if c.is_empty() { None } else { Some(c.parse::<f64>().unwrap()) }).collect::<Vec<_>>())
        .collect::<Vec<_>>();
    for r in &rows {
        assert_eq!(r.len(), header.len());
    }
    (header, rows)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn tuned_params_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ewe");
    let o = run(&["tune", "--spec", s(&specs().join("ewe.spec")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("params.txt")).unwrap();
    let parsed = ParamsFile::parse("params.txt", &text).unwrap();
    assert_eq!(parsed.render("tuned for ewe"), text);
    assert_eq!(ParamsFile::parse("again", &parsed.render("")).unwrap(), parsed);

    let d = json(&out.join("diagnostics.json"));
    assert_eq!(d["validation"]["pass"], true);
    assert_eq!(d["constraint_report"]["pass"], true);
    assert!(!d["diagnostics"]["history"].as_array().unwrap().is_empty());

    let o = run(&["validate", "--spec", s(&specs().join("ewe.spec")), "--params", s(&out.join("params.txt"))]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ewe = std::fs::read_to_string(specs().join("ewe.spec")).unwrap();

    let bad = write(d, "bad.spec", &format!("{ewe}\nwhatever = 1\n"));
    assert_eq!(run(&["tune", "--spec", s(&bad), "--out", s(d)]).status.code(), Some(2));
    let garbled = write(d, "garbled.spec", "whole_cycle_days 16.5\n");
    assert_eq!(run(&["tune", "--spec", s(&garbled), "--out", s(d)]).status.code(), Some(2));
    assert_eq!(run(&["tune", "--spec", s(&d.join("missing.spec")), "--out", s(d)]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--days", "1"]).status.code(), Some(2));

    let steep = write(d, "steep.spec", &ewe.replace("frequency_ratio = 4", "frequency_ratio = 50").replace("early_luteal_pulse_period_minutes = 150\n", ""));
    let o = run(&["tune", "--spec", s(&steep), "--out", s(d)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("FrequencyRatioUnreachable"));

    let params = write(d, "t2.txt", TABLE2);
    let negative = write(d, "neg.txt", &TABLE2.replace("a0 = 0.52", "a0 = -0.52"));
    assert_eq!(run(&["simulate", "--params", s(&negative), "--days", "1", "--out", s(d)]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--params", s(&params), "--days", "1", "--samples-per-day", "10", "--out", s(d)]).status.code(), Some(2));
    assert_eq!(run(&["leaf", "--ratio", "0.5"]).status.code(), Some(2));
    assert_eq!(run(&["bifurcation-map", "--eps", "0.5"]).status.code(), Some(2));

    // far too short to contain a cycle
    let short = write(d, "short.csv", "t,x,y,X,Y\n0,0,0,0,0\n1,0,0,0,0\n");
    assert_eq!(run(&["analyze", "--input", s(&short)]).status.code(), Some(3));
    let broken = write(d, "broken.csv", "t,x,y\n0,0,0\n");
    assert_eq!(run(&["analyze", "--input", s(&broken)]).status.code(), Some(2));
}

#[test]
fn zero_length_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let params = write(dir.path(), "t2.txt", TABLE2);
    let o = run(&["simulate", "--params", s(&params), "--days", "0", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap(), "t,x,y,X,Y\n");
    assert_eq!(std::fs::read_to_string(dir.path().join("events.csv")).unwrap(), "t,kind\n");
}

fn surge_peaks(events: &Path) -> usize {
    std::fs::read_to_string(events).unwrap().lines().filter(|l| l.ends_with(",SurgePeak")).count()
}

#[test]
fn published_sets_simulate_and_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let dpu2 = 16.5 / TABLE2_PERIOD;
    let t2 = write(d, "t2.txt", &format!("{TABLE2}days_per_unit = {dpu2}\n"));
    let out = d.join("sheep");
    let o = run(&["simulate", "--params", s(&t2), "--days", "33", "--out", s(&out), "--gnuplot"]);
    assert!(o.status.success());
    assert!(out.join("trajectory.gp").exists());
    let (header, rows) = read_csv(&out.join("trajectory.csv"));
    assert_eq!(header, ["t", "x", "y", "X", "Y"]);
    assert!((rows.last().unwrap()[0].unwrap() * dpu2 - 33.0).abs() < 1e-3);
    assert_eq!(surge_peaks(&out.join("events.csv")), 2);

    let o = run(&["simulate", "--params", s(&t2), "--days", "60", "--out", s(&out)]);
    assert!(o.status.success());
    let o = run(&["analyze", "--input", s(&out.join("trajectory.csv")), "--params", s(&t2), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let f = json(&out.join("features.json"));
    for key in [
        "cycle_period_days",
        "surge_duration_days",
        "follicular_days",
        "luteal_days",
        "amplitude_ratio",
        "frequency_ratio",
        "pulse_period_presurge_minutes",
        "pulse_period_luteal_minutes",
    ] {
        assert!(f[key].is_number(), "{key}");
    }
    assert!((f["cycle_period_days"].as_f64().unwrap() / 16.5 - 1.0).abs() < 0.05);
    assert!((f["amplitude_ratio"].as_f64().unwrap() / 60.0 - 1.0).abs() < 0.2);

    let dpu4 = 28.0 / TABLE4_PERIOD;
    let t4 = write(d, "t4.txt", &format!("{TABLE4}days_per_unit = {dpu4}\n"));
    let out = d.join("rhesus");
    assert!(run(&["simulate", "--params", s(&t4), "--days", "56", "--out", s(&out)]).status.success());
    let n = surge_peaks(&out.join("events.csv"));
    assert!((2..=3).contains(&n), "{n}");
}

fn interpolate(rows: &[Vec<Option<f64>>], col: usize, b1: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r[0]?, r[col]?))).collect();
    pts.windows(2).find(|w| w[0].0 <= b1 && b1 <= w[1].0).map(|w| {
        let s = (b1 - w[0].0) / (w[1].0 - w[0].0);
        w[0].1 + s * (w[1].1 - w[0].1)
    })
}

#[test]
fn middle_leaf_lies_between_its_neighbours() {
    let dir = tempfile::tempdir().unwrap();
    let mut leaves = Vec::new();
    for r in ["3", "6", "9"] {
        let out = dir.path().join(format!("r{r}"));
        let o = run(&["leaf", "--ratio", r, "--eps", "0.02", "--points", "20", "--out", s(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let (header, rows) = read_csv(&out.join("leaf.csv"));
        assert_eq!(header, ["b1", "b2_zero_order", "b2_simulated", "achieved_ratio"]);
        leaves.push(rows);
    }
    let mut compared = 0;
    for row in &leaves[1] {
        let b1 = row[0].unwrap();
        for col in [1, 2] {
            let (Some(mid), Some(below), Some(above)) = (row[col], interpolate(&leaves[0], col, b1), interpolate(&leaves[2], col, b1)) else {
                continue;
            };
            assert!(below < mid && mid < above, "b1 = {b1}, column {col}: {below} {mid} {above}");
            compared += 1;
        }
    }
    assert!(compared >= 8, "{compared}");
}

#[test]
fn bifurcation_map_columns() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["bifurcation-map", "--eps", "0.02", "--points", "12", "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&dir.path().join("bifurcation.csv"));
    assert_eq!(header, ["b1", "hopf_b2", "homoclinic0_b2", "homoclinic_numeric_b2"]);
    assert_eq!(rows.len(), 12);
    let mu = 2.0 / 3f64.sqrt();
    // the two zero-order lines cross at b1 = 1 / (4 mu^2)
    let crossing = 1.0 / (4.0 * mu * mu);
    let mut numeric = 0;
    for r in &rows {
        let (b1, hopf, hc0) = (r[0].unwrap(), r[1].unwrap(), r[2].unwrap());
        assert_eq!(hopf > hc0, b1 > crossing, "b1 = {b1}");
        if let Some(h) = r[3] {
            assert!(h < hc0 && hc0 - h < 0.2, "b1 = {b1}: {h} vs {hc0}");
            numeric += 1;
        }
    }
    assert!(numeric >= 3);
}
