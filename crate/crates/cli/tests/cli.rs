use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn compclust(args: &[&str], cwd: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_compclust"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "compclust {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn simulate(dir: &Path) {
    compclust(
        &["simulate", "--out", "sim", "--window", "0,40,0,40", "--sigma", "2", "--p", "0.4,0.6", "--lambda", "30", "--seed", "5"],
        dir,
    );
}

const FIT: &[&str] = &["--input", "sim/points.csv", "--sweeps", "150", "--burn-in", "50", "--n-moves", "50", "--n-null", "3"];

#[test]
fn simulate_then_fit_writes_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir);
    for f in ["points.csv", "truth.csv", "centers.csv", "report.json"] {
        assert!(dir.join("sim").join(f).is_file(), "{f}");
    }
    let n_points = fs::read_to_string(dir.join("sim/points.csv")).unwrap().lines().count() - 1;
    let truth = fs::read_to_string(dir.join("sim/truth.csv")).unwrap();
    assert_eq!(truth.lines().count() - 1, n_points);

    let mut args = vec!["fit2", "--out", "fit"];
    args.extend_from_slice(FIT);
    compclust(&args, dir);
    for f in [
        "pattern.csv",
        "samples_chain0.jsonl",
        "samples_chain1.jsonl",
        "summary.csv",
        "sigma_hist.csv",
        "p1_hist.csv",
        "y_quantiles.csv",
        "comembership.csv",
        "association.csv",
        "report.json",
    ] {
        assert!(dir.join("fit").join(f).is_file(), "{f}");
    }
    let samples = fs::read_to_string(dir.join("fit/samples_chain0.jsonl")).unwrap();
    assert_eq!(samples.lines().count(), 150);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("fit/report.json")).unwrap()).unwrap();
    assert_eq!(report["k"], 2);
    assert_eq!(report["n_points"], n_points);

    compclust(&["diagnose", "--run", "fit", "--out", "diag", "--n-null", "0"], dir);
    assert_eq!(
        fs::read_to_string(dir.join("fit/summary.csv")).unwrap(),
        fs::read_to_string(dir.join("diag/summary.csv")).unwrap()
    );
}

#[test]
fn mode_of_a_dense_table() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("w.csv"), "3,1\n1,3\n").unwrap();
    let out = compclust(&["mode", "--weights", "w.csv"], tmp.path());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "{(1,1),(2,2)}");
}

#[test]
fn same_seed_same_summaries() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir);
    for out in ["a", "b"] {
        let mut args = vec!["fit", "--out", out, "--seed", "11"];
        args.extend_from_slice(FIT);
        compclust(&args, dir);
    }
    for f in ["summary.csv", "y_quantiles.csv", "comembership.csv", "association.csv", "samples_chain1.jsonl"] {
        assert_eq!(fs::read(dir.join("a").join(f)).unwrap(), fs::read(dir.join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn kcross_reports_a_p_value() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir);
    let out = compclust(
        &["kcross", "--input", "sim/points.csv", "--out", "kc", "--n-sims", "19", "--n-mean-sims", "19", "--bandwidth", "8"],
        dir,
    );
    assert!(String::from_utf8(out.stdout).unwrap().contains("p-value"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("kc/report.json")).unwrap()).unwrap();
    let p = report["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn bad_arguments_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_compclust"))
        .args(["fit2", "--input", "missing.csv", "--out", "o"])
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = Command::new(env!("CARGO_BIN_EXE_compclust"))
        .args(["fit2", "--input", "x.csv", "--out", "o", "--tempering"])
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
}
