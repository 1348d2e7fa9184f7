use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TOY: &str = r#"{
    "scenario": {"wavelength": 0.01, "n_antennas": 4, "n_users": 2, "paths_per_user": 6,
                 "candidate_count": 20, "region_size_wavelengths": 3, "pt_dbm": 30, "sigma2_dbm": -90},
    "laga": {"max_stages": 8},
    "experiment": {"eval_samples": 50}
}"#;

fn mapos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mapos")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn run_in(dir: &Path, cmd: &str, config: &str, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec![cmd, "--config", config, "--output", out];
    args.extend_from_slice(extra);
    mapos(&args)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn coords(v: &Value, key: &str) -> Vec<f64> {
    v[key].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = mapos(&["optimize", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read config"));
}

#[test]
fn toy_optimize_with_both_engines_gives_feasible_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TOY);
    let (half, spacing) = (0.015, 0.005);
    for engine in ["de", "mc"] {
        let out_dir = dir.path().join(engine);
        let out = run_in(&out_dir, "optimize", &config, &["--engine", engine]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let layout = read_json(&out_dir.join("layout.json"));
        let (x, y) = (coords(&layout, "x"), coords(&layout, "y"));
        assert_eq!(x.len(), 4);
        assert_eq!(layout["engine"], engine);
        for i in 0..4 {
            assert!(x[i].abs() < half && y[i].abs() < half, "antenna {i} outside the region");
            for j in 0..i {
                assert!((x[i] - x[j]).hypot(y[i] - y[j]) > spacing, "antennas {i} and {j} too close");
            }
        }
        let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
        let hash = layout["config_hash"].as_str().unwrap();
        assert_eq!(trace.lines().next().unwrap(), format!("# config-hash: {hash}"));
        assert!(!trace.contains('\r'));
    }
    let hash = |e: &str| read_json(&dir.path().join(e).join("layout.json"))["config_hash"].clone();
    assert_ne!(hash("de"), hash("mc"));
}

#[test]
fn outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TOY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_in(&a, "optimize", &config, &["--seed", "3", "--jobs", "1"]).status.success());
    assert!(run_in(&b, "optimize", &config, &["--seed", "3"]).status.success());
    for file in ["layout.json", "trace.csv"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file} differs");
    }
}

#[test]
fn evaluate_writes_report_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let text = TOY.replace(
        r#""experiment": {"eval_samples": 50}"#,
        r#""experiment": {"eval_samples": 50, "realizations": 2, "schemes": ["UPA-dense", "UPA-sparse"]}"#,
    );
    let config = write_config(dir.path(), &text);
    let out = run_in(dir.path(), "evaluate", &config, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config-hash: "));
    assert_eq!(lines[1], "scheme,realization,mean_rate,stderr");
    assert_eq!(lines.len(), 2 + 4);
    let summary = read_json(&dir.path().join("summary.json"));
    assert_eq!(summary["schemes"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_leads_with_the_sweep_value() {
    let dir = tempfile::tempdir().unwrap();
    let text = TOY.replace(
        r#""experiment": {"eval_samples": 50}"#,
        r#""experiment": {"eval_samples": 20, "schemes": ["UPA-sparse"]},
           "sweep": {"axis": "pt_dbm", "values": [20, 30]}"#,
    );
    let config = write_config(dir.path(), &text);
    let out = run_in(dir.path(), "sweep", &config, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[1], "pt_dbm,scheme,realization,mean_rate,stderr");
    assert!(lines[2].starts_with("20,UPA-sparse,0,"));
    assert!(lines[3].starts_with("30,UPA-sparse,0,"));
    let rate = |l: &str| l.split(',').nth(3).unwrap().parse::<f64>().unwrap();
    assert!(rate(lines[3]) > rate(lines[2]));
}

#[test]
fn empty_sweep_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = TOY.replace(r#""laga""#, r#""sweep": {"axis": "rician_beta", "values": []}, "laga""#);
    let config = write_config(dir.path(), &text);
    let out = run_in(dir.path(), "sweep", &config, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
    assert!(!dir.path().join("sweep.csv").exists());
}

#[test]
fn invalid_scenario_is_rejected_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &TOY.replace(r#""n_users": 2"#, r#""n_users": 5"#));
    let out = run_in(dir.path(), "optimize", &config, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("layout.json").exists());
}

#[test]
fn quick_validation_passes() {
    let out = mapos(&["validate", "--level", "quick"]);
    let table = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{table}");
    assert!(table.contains("water-filling KKT") && !table.contains("FAIL"));
}

#[test]
fn tampered_water_filling_fails_validation() {
    let out = mapos(&["validate", "--tamper-water-fill"]);
    assert_eq!(out.status.code(), Some(1));
    let table = String::from_utf8_lossy(&out.stdout);
    let kkt = table.lines().find(|l| l.starts_with("water-filling KKT")).unwrap();
    assert!(kkt.contains("FAIL"), "{kkt}");
}
