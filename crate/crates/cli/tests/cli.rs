use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "fixtures", name].iter().collect();
    p.to_str().unwrap().to_string()
}

fn degell(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_degell")).args(args).env_remove("DEGELL_SEED").output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn solve_compatible_neumann_writes_zero_mean_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("cos.json");
    let out = degell(&["solve", &fixture("neumann_cos.toml"), "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(doc["result"]["branch"], "Alternative");
    assert_eq!(doc["spec"]["numerics"]["seed"], 42);
    let csv = std::fs::read_to_string(dir.path().join("cos_solution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,u"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let mut it = l.split(',').map(|s| s.parse::<f64>().unwrap());
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 201);
    let trapezoid: f64 = rows.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
    assert!(trapezoid.abs() < 1e-3);
}

#[test]
fn solve_incompatible_neumann_exits_2_with_residual_pi() {
    let out = degell(&["solve", &fixture("neumann_one.toml")]);
    assert_eq!(out.status.code(), Some(2));
    let r = json(&out)["result"]["compatibility_residuals"][0].as_f64().unwrap();
    assert!((r - std::f64::consts::PI).abs() < 1e-8);
}

#[test]
fn malformed_expression_reports_position() {
    let out = degell(&["solve", &fixture("bad_expr.toml")]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("si n(x)") && err.contains("line 12"), "{err}");
}

#[test]
fn shifted_solve_rejects_small_mu() {
    let out = degell(&["solve", &fixture("reaction.toml"), "--mu=-100"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
    let ok = degell(&["solve", &fixture("reaction.toml"), "--mu", "10"]);
    assert_eq!(ok.status.code(), Some(0));
    let doc = json(&ok);
    assert!(doc["result"]["shifted"]["bound_ratio"].as_f64().unwrap() <= doc["result"]["shifted"]["bound_limit"].as_f64().unwrap());
}

#[test]
fn spectrum_commands() {
    let out = degell(&["spectrum", &fixture("neumann_cos.toml"), "--k", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let eig: Vec<f64> = json(&out)["result"]["spectrum"]["eigenvalues"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    for (got, want) in eig.iter().zip([0.0, 1.0, 4.0, 9.0]) {
        assert!((got - want).abs() < 5e-3 * want.max(1.0));
    }
    let rec = degell(&["spectrum", &fixture("dirichlet_laplace.toml"), "--recursion"]);
    assert_eq!(rec.status.code(), Some(0));
    assert!(json(&rec)["result"]["spectrum"]["agreement"].as_f64().unwrap() <= 1e-8);
    let drift = degell(&["spectrum", &fixture("drift.toml"), "--recursion"]);
    assert_eq!(drift.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&drift.stderr).contains("not self-adjoint"));
}

#[test]
fn check_exit_codes() {
    let ok = degell(&["check", &fixture("reaction.toml"), "--which", "cond1_i", "--trials", "100"]);
    assert_eq!(ok.status.code(), Some(0));
    let eps = json(&ok)["result"]["outcome"]["report"]["constant"].as_f64().unwrap();
    assert!((eps - 1.0).abs() < 1e-9);
    let bad = degell(&["check", &fixture("negative_reaction.toml"), "--which", "cond1_i"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(json(&bad)["result"]["outcome"]["report"]["witness"].is_object());
    let mp = degell(&["check", &fixture("parabola.toml"), "--which", "maxprinciple"]);
    assert_eq!(mp.status.code(), Some(0));
    let unknown = degell(&["check", &fixture("parabola.toml"), "--which", "nope"]);
    assert_eq!(unknown.status.code(), Some(1));
    let skipped = degell(&["check", &fixture("neumann_cos.toml"), "--which", "uniqueness"]);
    assert_eq!(skipped.status.code(), Some(0));
    assert_eq!(json(&skipped)["result"]["outcome"]["report"]["skipped"], true);
}

#[test]
fn seed_flag_and_environment_override() {
    let a = degell(&["check", &fixture("reaction.toml"), "--which", "coercivity", "--trials", "20", "--seed", "7"]);
    assert_eq!(json(&a)["result"]["seed"], 7);
    let env = Command::new(env!("CARGO_BIN_EXE_degell"))
        .args(["check", &fixture("reaction.toml"), "--which", "coercivity", "--trials", "20"])
        .env("DEGELL_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(json(&env)["spec"]["numerics"]["seed"], 7);
    assert_eq!(json(&env)["result"]["outcome"], json(&a)["result"]["outcome"]);
}

#[test]
fn poincare_and_convergence() {
    let p = degell(&["poincare", &fixture("neumann_cos.toml")]);
    assert_eq!(p.status.code(), Some(0));
    let c = json(&p)["result"]["constant"].as_f64().unwrap();
    assert!((c - 1.0).abs() < 1e-2);
    let wide = degell(&["poincare", &fixture("neumann_cos.toml"), "--r", "5"]);
    assert_eq!(wide.status.code(), Some(0));
    assert!(json(&wide)["warnings"].as_array().unwrap().iter().any(|w| w.as_str().unwrap().contains("gain")));

    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("conv.json");
    let conv = degell(&["convergence", &fixture("dirichlet_laplace.toml"), "--out", out_path.to_str().unwrap()]);
    assert_eq!(conv.status.code(), Some(0));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    for row in doc["result"]["rates"].as_array().unwrap() {
        for r in row.as_array().unwrap() {
            assert!((r.as_f64().unwrap() - 2.0).abs() < 0.2);
        }
    }
    let table = std::fs::read_to_string(dir.path().join("conv_table.csv")).unwrap();
    assert!(table.starts_with("n,h,lambda1"));
    assert_eq!(table.lines().count(), 5);
}
