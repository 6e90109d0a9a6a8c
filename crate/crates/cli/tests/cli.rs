use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coi-inertia"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn simulate(dir: &Path) {
    let out = cli(&["simulate", "--grid", "two_area_4mach", "--out", p(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn report<'a>(reports: &'a Value, region: &str) -> &'a Value {
    reports["reports"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["region_id"] == region)
        .unwrap()
}

#[test]
fn simulate_writes_measurements_and_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data);
    for f in ["measurements.csv", "measurements.json", "truth.json", "regions.json", "f_coi_true.csv"] {
        assert!(data.join(f).is_file(), "missing {f}");
    }
    let head = std::fs::read_to_string(data.join("measurements.csv")).unwrap();
    assert!(head.starts_with("time_s,bus_id,freq_hz,p_pu\n"));
    let truth = json(&data.join("truth.json"));
    assert_eq!(truth["regions"].as_array().unwrap().len(), 2);
}

#[test]
fn grid_file_is_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = tmp.path().join("two_area.json");
    let cfg = inertia_core::gridsim::make_benchmark("two_area_4mach").unwrap();
    std::fs::write(&grid, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let out = cli(&["simulate", "--grid", p(&grid), "--out", p(&tmp.path().join("data"))]);
    assert!(out.status.success());
    assert!(tmp.path().join("data/measurements.csv").is_file());
}

#[test]
fn unknown_benchmark_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cli(&["simulate", "--grid", "ieee_9999", "--out", p(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown benchmark `ieee_9999`"));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        simulate(dir);
        let m = dir.join("measurements.csv");
        let out = cli(&["pipeline", "--measurements", p(&m), "--out", p(&dir.join("run"))]);
        assert!(out.status.success());
    }
    for f in [
        "measurements.csv",
        "truth.json",
        "f_coi_true.csv",
        "run/reports.json",
        "run/reports.csv",
        "run/typicality.json",
        "run/inertia.json",
        "run/plot_R1.csv",
    ] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn pipeline_estimates_two_area_regions() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cli(&["pipeline", "--grid", "two_area_4mach", "--out", p(tmp.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let reports = json(&tmp.path().join("reports.json"));
    for region in ["R1", "R2"] {
        let r = report(&reports, region);
        assert!(r["re_percent"].as_f64().unwrap() <= 8.0, "{r}");
    }
    let plot = std::fs::read_to_string(tmp.path().join("plot_R1.csv")).unwrap();
    assert!(plot.starts_with("time_s,f_pb,f_coi_true,f_g,f_b\n"));
    let table = cli(&["report", "--out", p(tmp.path())]);
    assert!(table.status.success());
    assert!(String::from_utf8_lossy(&table.stdout).contains("R2"));
}

#[test]
fn metric_form_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path());
    let m = tmp.path().join("measurements.csv");
    let run = tmp.path().join("run");
    let out = cli(&["pipeline", "--measurements", p(&m), "--metric-form", "paper_literal", "--out", p(&run)]);
    assert!(out.status.success());
    assert_eq!(json(&run.join("reports.json"))["metric_form"], "paper_literal");
    for t in json(&run.join("typicality.json")).as_array().unwrap() {
        assert_eq!(t["metric_form"], "paper_literal");
    }
    let bad = cli(&["pipeline", "--measurements", p(&m), "--metric-form", "cosine", "--out", p(&run)]);
    assert!(!bad.status.success());
}

#[test]
fn missing_tie_line_only_fails_its_region() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path());
    let mut regions = json(&tmp.path().join("regions.json"));
    regions[0]["tie_lines"] = serde_json::json!(["B07-B99"]);
    let reg = tmp.path().join("broken.json");
    std::fs::write(&reg, serde_json::to_vec(&regions).unwrap()).unwrap();
    let run = tmp.path().join("run");
    let m = tmp.path().join("measurements.csv");
    let out = cli(&["pipeline", "--measurements", p(&m), "--regions", p(&reg), "--out", p(&run)]);
    assert!(out.status.success());
    let reports = json(&run.join("reports.json"));
    let r1 = report(&reports, "R1");
    assert!(r1["h_est"].is_null());
    assert!(r1["error"].as_str().unwrap().contains("region R1"));
    assert!(r1["pilot_bus"].is_string());
    assert!(report(&reports, "R2")["h_est"].as_f64().is_some());
}

#[test]
fn unmet_gate_exits_nonzero_without_a_number() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path());
    let m = tmp.path().join("measurements.csv");
    let run = tmp.path().join("run");
    let out = cli(&["estimate", "--measurements", p(&m), "--nrse-gate", "100.5", "--out", p(&run)]);
    assert_eq!(out.status.code(), Some(2));
    let reports = json(&run.join("reports.json"));
    for region in ["R1", "R2"] {
        let r = report(&reports, region);
        assert!(r["h_est"].is_null());
        assert_eq!(r["accepted_models"], 0);
    }
}

#[test]
fn detect_pilot_lists_each_region() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path());
    let m = tmp.path().join("measurements.csv");
    let out = cli(&["detect-pilot", "--measurements", p(&m), "--out", p(tmp.path())]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 2);
    let typ = json(&tmp.path().join("typicality.json"));
    for t in typ.as_array().unwrap() {
        let sum: f64 = t["tau"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
}

#[test]
fn orders_flag_limits_the_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path());
    let m = tmp.path().join("measurements.csv");
    let run = tmp.path().join("run");
    let out = cli(&["estimate", "--measurements", p(&m), "--orders", "2,3", "--out", p(&run)]);
    assert!(out.status.success());
    let inertia = json(&run.join("inertia.json"));
    assert_eq!(inertia["R1"]["per_order"].as_array().unwrap().len(), 2);
}
