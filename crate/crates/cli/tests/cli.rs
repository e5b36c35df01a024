use std::path::Path;
use std::process::{Command, Output};

use longrun::experiments::ExperimentSpec;

fn longrun(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_longrun")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = longrun(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two persistent series with a shared slow component, one row per date.
fn write_observed(path: &Path, n: usize) {
    let mut text = String::from("date,gdp,cpi\n");
    let (mut a, mut b, mut state) = (0.0f64, 0.0f64, 12345u64);
    let mut draw = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    };
    for i in 0..n {
        let common = (i as f64 / n as f64 * 6.0).sin();
        a = 0.5 * a + draw();
        b = 0.3 * b + draw();
        text.push_str(&format!("{i},{},{}\n", common + a, 0.5 * common + b));
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn simulate_then_estimate_then_predict() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("path.csv");
    ok(&["simulate", "--t", "7200", "--seed", "3", "--out", s(&path)]);
    let est = dir.path().join("est");
    let text = ok(&["estimate", "--input", s(&path), "--out", s(&est)]);
    assert!(!text.is_empty());
    assert!(est.join("report.txt").exists());
    let report = est.join("estimates.csv");
    let pred = dir.path().join("pred.csv");
    let line = ok(&[
        "predict",
        "--report",
        s(&report),
        "--gamma",
        "0.1",
        "--belt-reps",
        "200",
        "--out",
        s(&pred),
    ]);
    assert!(line.starts_with("upper bound"));
    assert!(std::fs::read_to_string(&pred).unwrap().contains("upper"));
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    ok(&["simulate", "--t", "500", "--seed", "9", "--out", s(&a)]);
    ok(&["simulate", "--t", "500", "--seed", "9", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = dir.path().join("c.csv");
    ok(&["simulate", "--t", "500", "--seed", "10", "--out", s(&c)]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn acf_and_belt_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("path.csv");
    ok(&["simulate", "--t", "2000", "--out", s(&path)]);
    for kind in ["standard", "local", "averaged", "means", "distant"] {
        let out = dir.path().join(format!("acf_{kind}.csv"));
        ok(&["acf", "--input", s(&path), "--kind", kind, "--max-lag", "5", "--c", "0.5", "--out", s(&out)]);
        assert!(out.exists(), "{kind}");
    }
    let belt = dir.path().join("belt.csv");
    ok(&["belt", "--reps", "50", "--svg", "--out", s(&belt)]);
    assert!(belt.exists() && belt.with_extension("svg").exists());
}

#[test]
fn ltu_writes_every_variant() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["ltu", "--t", "200", "--reps", "100", "--out", s(dir.path())]);
    let summary = std::fs::read_to_string(dir.path().join("tail_summary.csv")).unwrap();
    assert!(summary.lines().filter(|l| !l.starts_with('#')).count() > 2);
}

#[test]
fn experiment_preset_and_spec_file_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["experiment", "run", "bivariate", "--out", s(&a)]);
    ok(&["experiment", "run", "bivariate", "--out", s(&b)]);
    for name in ["manifest.csv", "local_means.csv", "acf_averaged.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }

    let mut spec = ExperimentSpec::preset("appendix3").unwrap();
    spec.reps = 200;
    let spec_path = dir.path().join("small.kv");
    std::fs::write(&spec_path, spec.to_kv().render()).unwrap();
    let out = dir.path().join("spec");
    let text = ok(&["experiment", "run", s(&spec_path), "--out", s(&out)]);
    assert!(text.contains(&spec.hash()));
}

#[test]
fn apply_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("series.csv");
    write_observed(&input, 440);
    let out = dir.path().join("apply");
    ok(&["apply", "--input", s(&input), "--belt-reps", "100", "--out", s(&out)]);
    for name in ["table1.csv", "table2.csv", "filtered.csv", "run.log"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let table1 = std::fs::read_to_string(out.join("table1.csv")).unwrap();
    assert!(table1.contains("gdp") && table1.contains("cpi"));
}

#[test]
fn bad_inputs_fail_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = dir.path().join("x");
    let cases: Vec<Vec<&str>> = vec![
        vec!["estimate", "--input", s(&missing), "--out", s(&out)],
        vec!["experiment", "run", "no_such_preset", "--out", s(&out)],
        vec!["simulate", "--t", "0", "--out", s(&out)],
    ];
    for args in &cases {
        let res = longrun(args);
        assert_eq!(res.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&res.stderr).starts_with("error:"), "{args:?}");
    }

    let ragged = dir.path().join("ragged.csv");
    std::fs::write(&ragged, "date,a\n1,0.5\n2\n").unwrap();
    let res = longrun(&["apply", "--input", s(&ragged), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 3"));

    let usage = longrun(&["predict"]);
    assert!(!usage.status.success());
}
