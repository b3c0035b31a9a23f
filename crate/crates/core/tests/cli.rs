use nst_core::experiment::ExperimentConfig;
use std::path::{Path, PathBuf};
use std::process::Command;

fn nst(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nst")).args(args).output().unwrap()
}

fn outputs(dir: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    files
}

fn without_wall_time(text: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
    v.as_object_mut().unwrap().remove("wall_time_secs");
    v
}

#[test]
fn persisted_config_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_json(r#"{"data": "synthetic:ou:10,1,0.2,2,2,5", "trials": 2}"#).unwrap();
    cfg.discovery.rounds = 3;
    cfg.discovery.calib.epochs = 10;
    cfg.discovery.calib.n_paths = 20;
    let cfg_path = tmp.path().join("in.json");
    std::fs::write(&cfg_path, cfg.to_canonical_json()).unwrap();

    let a = tmp.path().join("a");
    let out = nst(&["discover", "--config", cfg_path.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let persisted = std::fs::read_to_string(a.join("config.json")).unwrap();
    assert_eq!(persisted, cfg.to_canonical_json());
    assert_eq!(ExperimentConfig::from_json(&persisted).unwrap().to_canonical_json(), persisted);

    let b = tmp.path().join("b");
    let out = nst(&["run", "--config", a.join("config.json").to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(out.status.success());

    let files = outputs(&a);
    assert_eq!(files, outputs(&b));
    assert!(files.iter().any(|f| f.ends_with("trial_1/round_2/calibration.csv")));
    for f in files {
        let (x, y) = (std::fs::read(a.join(&f)).unwrap(), std::fs::read(b.join(&f)).unwrap());
        if f.ends_with("run_manifest.json") {
            assert_eq!(
                without_wall_time(std::str::from_utf8(&x).unwrap()),
                without_wall_time(std::str::from_utf8(&y).unwrap())
            );
        } else {
            assert!(x == y, "{} differs", f.display());
        }
    }
}

#[test]
fn validate_reports_status() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good.sde");
    std::fs::write(&good, "dV = mu*V dt + sigma*V dW\n").unwrap();
    let out = nst(&["validate", "--model", good.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("dV = (mu*V) dt + (sigma*V) dW"));

    let bad = tmp.path().join("bad.sde");
    std::fs::write(&bad, "dV = a*U dt + s*V dW\n").unwrap();
    let out = nst(&["validate", "--model", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("UNDEFINED_STATE"));

    std::fs::write(&bad, "dV = a*V dt + s*V dQ\n").unwrap();
    assert_eq!(nst(&["validate", "--model", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn calibrate_and_market_commands_write_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("gbm.sde");
    std::fs::write(&model, "param mu = 0.1\nparam sigma = 0.1\ndV = mu*V dt + sigma*V dW\n").unwrap();
    let c = tmp.path().join("c");
    let out = nst(&[
        "calibrate", "--data", "synthetic:gbm:0.1,0.15,1", "--model", model.to_str().unwrap(),
        "--epochs", "5", "--out", c.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["calibration.csv", "model.sde", "result.json", "chart.png", "run_manifest.json"] {
        assert!(c.join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(c.join("calibration.csv")).unwrap().lines().count(), 6);

    let csv = tmp.path().join("prices.csv");
    let mut text = String::from("date,close\n");
    for i in 0..40 {
        text += &format!("2023-{:02}-{:02},{}\n", i / 28 + 1, i % 28 + 1, 100.0 + (i as f64).sin() * 3.0 + i as f64);
    }
    std::fs::write(&csv, &text).unwrap();
    let m = tmp.path().join("m");
    let args = ["market", "--data", csv.to_str().unwrap(), "--windows", "2", "--traders", "1", "--realizations", "2"];
    let out = nst(&[&args[..], &["--out", m.to_str().unwrap()]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = std::fs::read_to_string(m.join("market_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 40);
    assert!(m.join("comparison.png").is_file());
    assert!(m.join("window_2/trader_0/trace.json").is_file());

    std::fs::write(&csv, "date,close\n2023-01-01,5\n2023-01-01,6\n").unwrap();
    let out = nst(&[&args[..], &["--out", m.to_str().unwrap()]].concat());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lines 2 and 3"));
}
