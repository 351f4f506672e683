use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hjm-finn"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// synth -> ingest -> estimate-vol -> train, returning (data, vol, model).
fn pipeline(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let raw = p(dir, "raw.csv");
    let data = p(dir, "curves.json");
    let vol = p(dir, "vol.json");
    let model = p(dir, "model.json");
    run(&["synth", "--days", "300", "--seed", "3", "--out", s(&raw)]);
    run(&["ingest", "--input", s(&raw), "--k", "10", "--out", s(&data)]);
    run(&["estimate-vol", "--input", s(&data), "--out", s(&vol)]);
    run(&[
        "train", "--data", s(&data), "--vol", s(&vol), "--k", "10", "--epochs", "2,1,1", "--width", "8",
        "--seed", "7", "--out", s(&model), "--quiet",
    ]);
    (data, vol, model)
}

#[test]
fn end_to_end_commands() {
    let dir = tempfile::tempdir().unwrap();
    let (data, vol, model) = pipeline(dir.path());

    let losses = std::fs::read_to_string(model.with_extension("losses.csv")).unwrap();
    let mut lines = losses.lines();
    assert_eq!(lines.next(), Some("epoch,pde,bc,zs,lr"));
    assert_eq!(lines.count(), 4);

    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&vol).unwrap()).unwrap();
    assert_eq!(v["coeffs"].as_array().unwrap().len(), 3);

    let curve = p(dir.path(), "curve.json");
    std::fs::write(
        &curve,
        r#"{"beta0":0.045,"beta1":-0.02,"beta2":-0.01,"beta3":0.01,"tau1":1.5,"tau2":8.0}"#,
    )
    .unwrap();
    let contract = ["--tau1", "1.0", "--delta", "0.5", "--strike", "0.02"];

    let out = run(&[&["price", "--model", s(&model), "--curve", s(&curve)][..], &contract].concat());
    let q: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(q["price"].as_f64().unwrap() >= 0.0);
    assert_eq!(q["curve_deltas"].as_array().unwrap().len(), 10);
    assert!(q["theta"].is_f64() && q["eval_time_s"].is_f64());

    let out = run(&[&["greeks", "--model", s(&model), "--curve", s(&curve)][..], &contract].concat());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "tau,delta");
    assert_eq!(rows.len(), 11);
    let deltas: Vec<f64> = rows[1..].iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    for (d, e) in deltas.iter().zip(q["curve_deltas"].as_array().unwrap()) {
        assert_eq!(*d, e.as_f64().unwrap());
    }

    let out = run(&[&["mc-price", "--curve", s(&curve), "--vol", s(&vol), "--paths", "200", "--seed", "1"][..], &contract].concat());
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(m["price"].as_f64().unwrap() > 0.0);
    assert!(m["std_error"].as_f64().unwrap() > 0.0);
    assert!(m["elapsed_s"].is_f64());

    let results = p(dir.path(), "results");
    let bench = |gate: &str| {
        bin()
            .args([
                "bench", "--model", s(&model), "--data", s(&data), "--n", "4", "--paths", "100", "--reps", "1",
                "--seed", "11", "--out", s(&results), "--max-mae", gate,
            ])
            .output()
            .unwrap()
    };
    let pass = bench("10");
    assert!(pass.status.success(), "{}", String::from_utf8_lossy(&pass.stderr));
    for f in ["error.csv", "timing.csv", "scatter.csv"] {
        assert!(results.join(f).exists(), "{f}");
    }
    let timing = std::fs::read_to_string(results.join("timing.csv")).unwrap();
    assert!(timing.starts_with("k,mc_s,finn_s,speedup,mae\n10,"));
    let scatter = std::fs::read_to_string(results.join("scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 5);

    let fail = bench("0");
    assert_eq!(fail.status.code(), Some(1));
}

#[test]
fn flat_zero_vol_mc_price_matches_forward_payoff() {
    // Deterministic flat curve: the caplet pays delta * P(t, t+delta) * (L - K)
    // discounted at the same flat rate.
    let out = run(&[
        "mc-price", "--flat", "0.04", "--zero-vol", "--tau1", "1.0", "--delta", "0.5", "--strike", "0.0",
        "--paths", "10", "--dt", "0.05",
    ]);
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let expect = (-0.04f64 * 1.0).exp() - (-0.04f64 * 1.5).exp();
    assert!((m["price"].as_f64().unwrap() - expect).abs() < 1e-12);
    assert!(m["std_error"].as_f64().unwrap() < 1e-12);
}

#[test]
fn estimate_vol_from_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let path = p(dir.path(), "levels.csv");
    let mut text = String::from("1,2,3,4,5\n");
    let mut state = 12345u64;
    let mut level = [0.03, 0.032, 0.034, 0.035, 0.036];
    for _ in 0..200 {
        for (j, l) in level.iter_mut().enumerate() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            *l += 0.0004 * u * (1.0 + j as f64 * 0.1);
        }
        let row: Vec<String> = level.iter().map(|x| x.to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(&path, text).unwrap();
    let vol = p(dir.path(), "vol.json");
    run(&["estimate-vol", "--input", s(&path), "--matrix", "--out", s(&vol)]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&vol).unwrap()).unwrap();
    assert_eq!(v["fit_domain"][1].as_f64(), Some(5.0));
}

#[test]
fn missing_file_is_an_error() {
    let out = bin()
        .args(["ingest", "--input", "/nonexistent/raw.csv", "--out", "/tmp/x.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
