use std::path::Path;
use std::process::{Command, Output};

fn pixel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pixel")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn tiny_solve(dir: &Path, seed: &str) -> Output {
    pixel(&[
        "solve",
        "--pde",
        "convection",
        "--grid",
        "8x8",
        "--multigrid",
        "4",
        "--iterations",
        "3",
        "--eval-every",
        "1",
        "--n-res",
        "300",
        "--n-ic",
        "100",
        "--n-bc",
        "100",
        "--seed",
        seed,
        "--out",
        dir.to_str().unwrap(),
    ])
}

fn metrics_without_wall_clock(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_ms");
            v
        })
        .collect()
}

#[test]
fn dry_run_materializes_defaults() {
    let out = pixel(&["solve", "--pde", "burgers", "--dry-run"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["train"]["lambda_res"], 0.01);
    assert_eq!(v["train"]["grid"], serde_json::json!([16, 4, 16, 16]));
    assert_eq!(v["train"]["kernel"], "cosine");

    let out = pixel(&["solve", "--pde", "convection", "--grid", "16x16", "--multigrid", "96", "--channels", "4", "--dry-run"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["train"]["grid"], serde_json::json!([96, 4, 16, 16]));
}

#[test]
fn configuration_errors_exit_with_2() {
    assert_eq!(code(&pixel(&["solve", "--kernel", "linear", "--pde", "burgers"])), 2);
    assert_eq!(code(&pixel(&["solve", "--pde", "heat"])), 2);
    assert_eq!(code(&pixel(&["solve", "--pde", "convection", "--bogus"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"train": {"pde": "convection", "learning_rate": 1}}"#).unwrap();
    let out = pixel(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn diverging_run_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = pixel(&[
        "solve", "--pde", "convection", "--set", "beta=1e300", "--iterations", "2", "--n-res", "50", "--n-ic", "20",
        "--n-bc", "20", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn solve_writes_artifacts_and_eval_rescores_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiny_solve(dir.path(), "100");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let metrics = metrics_without_wall_clock(&dir.path().join("metrics.jsonl"));
    assert_eq!(metrics.len(), 4);
    let field = std::fs::read_to_string(dir.path().join("field.csv")).unwrap();
    assert_eq!(field.lines().next(), Some("x,t,u_pred,u_ref,abs_err"));
    assert_eq!(field.lines().count(), 1 + 256 * 100);
    let (w, h, _) = pixel_core::io::read_ppm(&dir.path().join("u_pred.ppm")).unwrap();
    assert_eq!((w, h), (256, 100));
    assert!(dir.path().join("u_pred.ppm.range").exists());

    // Re-score the exported field independently of the library.
    let (mut num, mut den) = (0.0, 0.0);
    for line in field.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        num += (v[2] - v[3]).powi(2);
        den += v[3] * v[3];
    }
    let rescored = (num / den).sqrt();
    let last = metrics.last().unwrap()["rel_l2"].as_f64().unwrap();
    assert!((rescored - last).abs() <= 1e-12 * last.max(1.0));

    let eval_dir = dir.path().join("eval");
    let ckpt = dir.path().join("model.ckpt");
    let out = pixel(&[
        "eval",
        "--pde",
        "convection",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rel_l2"].as_f64().unwrap(), last);

    let out = pixel(&["eval", "--pde", "burgers", "--checkpoint", ckpt.to_str().unwrap(), "--out", eval_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn identical_seeds_give_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&tiny_solve(a.path(), "7")), 0);
    assert_eq!(code(&tiny_solve(b.path(), "7")), 0);
    assert_eq!(
        metrics_without_wall_clock(&a.path().join("metrics.jsonl")),
        metrics_without_wall_clock(&b.path().join("metrics.jsonl"))
    );
    for f in ["model.ckpt", "field.csv", "u_pred.ppm"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn rendered_config_round_trips_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let out = pixel(&["invert", "--pde", "burgers", "--lambda-res", "0.3", "--init", "nu=0.05", "--dry-run"]);
    assert_eq!(code(&out), 0);
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, &out.stdout).unwrap();
    let again = pixel(&["invert", "--config", cfg.to_str().unwrap(), "--dry-run"]);
    assert_eq!(again.stdout, out.stdout);
}

#[test]
fn invert_records_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let out = pixel(&[
        "invert", "--pde", "convection", "--grid", "8x8", "--multigrid", "4", "--iterations", "2", "--n-res", "200",
        "--n-ic", "50", "--n-bc", "50", "--n-data", "300", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let lines = std::fs::read_to_string(dir.path().join("coefficients.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["values"]["beta"], 1.0);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = pixel(&["gradcheck", "--instances", "6", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().filter(|l| l.starts_with("ok")).count(), 6);
}
