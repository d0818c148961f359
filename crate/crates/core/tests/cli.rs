use std::path::Path;
use std::process::Command;

const TINY: &str = r#"{
    "system": {"kind": "pendulum", "damping": 0.05},
    "cost": {"q": [10.0, 0.5], "r": [0.01], "q_terminal": [50.0, 1.0], "target": [3.14159, 0.0]},
    "controller": {"samples": 48, "horizon": 10, "lambda": 1.0, "sigma": 2.0},
    "svgd": {"iterations": 2, "bandwidth": "median"},
    "experiment": {
        "n_trials": 3,
        "t_total": 0.2,
        "metrics": [
            {"name": "mse_theta", "kind": "mse", "signal_index": 0, "target": 3.14159},
            {"name": "ts_theta", "kind": "settling", "signal_index": 0, "target": 3.14159,
             "band": 0.5, "mode": "fraction_of_range"}
        ]
    }
}"#;

fn soppi(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_soppi"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_summarize_plotdata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("run");
    let run = soppi(&["run", "--config", &cfg, "--trials", "2", "--seed", "40", "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("4 trials written"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["complete"], true);
    assert_eq!(manifest["seeds"], serde_json::json!([40, 41]));

    let record = std::fs::read_to_string(out.join("records/soppi_trial001.csv")).unwrap();
    assert_eq!(record.lines().next().unwrap(), "t,state_0,state_1,u_0,wall_ms");
    assert_eq!(record.lines().count(), 1 + 11);

    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4);
    let pvalues = std::fs::read_to_string(out.join("pvalues.csv")).unwrap();
    assert_eq!(pvalues.lines().next().unwrap(), "metric,algo_a,algo_b,t,dof,p_value");
    assert_eq!(pvalues.lines().count(), 1 + 4);

    std::fs::remove_file(out.join("summary.csv")).unwrap();
    let s = soppi(&["summarize", "--in", out.to_str().unwrap()]);
    assert!(s.status.success());
    assert_eq!(std::fs::read_to_string(out.join("summary.csv")).unwrap(), summary);
    assert!(String::from_utf8_lossy(&s.stdout).contains("mse_theta"));

    let plots = dir.path().join("plots");
    let p = soppi(&["plotdata", "--in", out.to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    assert!(p.status.success());
    let theta = std::fs::read_to_string(plots.join("state_0.csv")).unwrap();
    assert_eq!(
        theta.lines().next().unwrap(),
        "t,mppi_trial000,mppi_trial001,soppi_trial000,soppi_trial001"
    );
}

#[test]
fn single_algorithm_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("run");
    let run = soppi(&["run", "--config", &cfg, "--algo", "mppi", "--trials", "1", "--out", out.to_str().unwrap()]);
    assert!(run.status.success());
    assert!(out.join("records/mppi_trial000.csv").exists());
    assert!(!out.join("records/soppi_trial000.csv").exists());
}

#[test]
fn bad_inputs_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace(r#""lambda": 1.0"#, r#""lambda": 1.0, "gamma": 2"#));
    let run = soppi(&["run", "--config", &cfg, "--out", dir.path().join("x").to_str().unwrap()]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("gamma"));

    let run = soppi(&["run", "--config", &cfg, "--algo", "ilqr"]);
    assert!(!run.status.success());

    let s = soppi(&["summarize", "--in", dir.path().join("missing").to_str().unwrap()]);
    assert!(!s.status.success());
}
