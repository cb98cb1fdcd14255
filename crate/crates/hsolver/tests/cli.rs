//! End-to-end checks of the command-line interface: CSV schema, exit codes,
//! solve/diag/factor-stats actions, MatrixMarket round trip.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hsolver"))
}

#[test]
fn bench_csv_schema_and_golden_fields() {
    let out = bin()
        .args([
            "--problem",
            "poisson2d:k=16",
            "--eps",
            "0.2",
            "--mode",
            "lorasp,gc-constant",
            "--solver",
            "gmres",
            "--tol",
            "1e-10",
            "--seed",
            "1",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "problem,n,tree_depth,eps,eps_schedule,mode,solver,iterations,final_residual,factor_time_s,solve_time_s,factor_entries"
    );
    assert_eq!(lines.len(), 3);
    // golden stable fields (times excluded): two deterministic rows sorted
    // by mode
    let stable = |line: &str| -> Vec<String> {
        let f: Vec<&str> = line.split(',').collect();
        vec![
            f[0].into(),
            f[1].into(),
            f[2].into(),
            f[3].into(),
            f[4].into(),
            f[5].into(),
            f[6].into(),
            f[7].into(),
            f[11].into(),
        ]
    };
    assert_eq!(
        stable(lines[1]),
        ["poisson2d:k=16", "256", "5", "0.2", "const", "gc-constant", "gmres", "4", "14797"]
    );
    assert_eq!(
        stable(lines[2]),
        ["poisson2d:k=16", "256", "5", "0.2", "const", "lorasp", "gmres", "5", "13400"]
    );
}

#[test]
fn bench_deterministic_across_invocations() {
    let run = || {
        let out = bin()
            .args([
                "--problem",
                "poisson2d:k=16:coeff=random:seed=5",
                "--eps",
                "0.2",
                "--mode",
                "gc-constant",
                "--seed",
                "9",
            ])
            .output()
            .unwrap();
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        let row = text.lines().nth(1).unwrap().to_string();
        let f: Vec<String> = row.split(',').map(String::from).collect();
        (f[7].clone(), f[8].clone(), f[11].clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn usage_error_exit_code_2() {
    let out = bin().args(["--problem", "noSuchFamily:k=4"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .args(["--problem", "poisson2d:k=8", "--eps", "1.5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    // clap-level flag error
    let out = bin().args(["--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_error_exit_code_3() {
    // an indefinite MatrixMarket input fails inside the factorization
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("indef.mtx");
    std::fs::write(
        &path,
        "%%MatrixMarket matrix coordinate real symmetric\n4 4 4\n1 1 -1.0\n2 2 1.0\n3 3 1.0\n4 4 1.0\n",
    )
    .unwrap();
    let out = bin()
        .args([
            "--problem",
            &format!("mm:{}", path.display()),
            "--depth",
            "1",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("not SPD"), "{err}");
}

#[test]
fn solve_action_writes_solution() {
    let dir = tempfile::tempdir().unwrap();
    let sol = dir.path().join("x.txt");
    let out = bin()
        .args([
            "--action",
            "solve",
            "--problem",
            "poisson2d:k=8",
            "--mode",
            "gc-constant",
            "--rhs",
            "ones",
            "--out",
            sol.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("relative_residual"), "{text}");
    let body = std::fs::read_to_string(&sol).unwrap();
    assert_eq!(body.lines().count(), 64);
}

#[test]
fn solve_on_matrix_market_roundtrip() {
    use hsolver::problems::{poisson_matrix, write_matrix_market, Coefficient, GridSpec};
    let dir = tempfile::tempdir().unwrap();
    let mtx = dir.path().join("p.mtx");
    let spec = GridSpec::new(2, 8, Coefficient::Constant(1.0)).unwrap();
    let (a, _) = poisson_matrix(&spec).unwrap();
    write_matrix_market(&a, &mtx).unwrap();
    let out = bin()
        .args([
            "--action",
            "solve",
            "--problem",
            &format!("mm:{}", mtx.display()),
            "--mode",
            "gc-constant",
            "--rhs",
            "ones",
            "--out",
            dir.path().join("x.txt").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let res: f64 = text
        .split("relative_residual=")
        .nth(1)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(res <= 1e-10);
}

#[test]
fn diag_action_emits_json_and_guards_size() {
    let out = bin()
        .args([
            "--action",
            "diag",
            "--problem",
            "poisson2d:k=8",
            "--eps",
            "0",
            "--mode",
            "lorasp",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let kappa = v[0]["kappa"].as_f64().unwrap();
    assert!((kappa - 1.0).abs() <= 1e-8);

    // refusal above the desk limit
    let out = bin()
        .args(["--action", "diag", "--problem", "poisson2d:k=128"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("4096"));
}

#[test]
fn factor_stats_action_and_hierarchy_dump() {
    let dir = tempfile::tempdir().unwrap();
    let hpath = dir.path().join("hier.json");
    let out = bin()
        .args([
            "--action",
            "factor-stats",
            "--problem",
            "poisson2d:k=16",
            "--eps",
            "0.1",
            "--eps-schedule",
            "leaf",
            "--dump-hierarchy",
            hpath.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let levels = v[0]["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 4);
    // leaf-anchored schedule shrinks toward the root
    let eps0 = levels[0]["eps_l"].as_f64().unwrap();
    let eps3 = levels[3]["eps_l"].as_f64().unwrap();
    assert_eq!(eps0, 0.1);
    assert_eq!(eps3, 0.05);
    let h: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&hpath).unwrap()).unwrap();
    assert_eq!(h["depth"], 5);
}

#[test]
fn sweep_emits_sorted_rows() {
    let out = bin()
        .args([
            "--problem",
            "poisson2d:k=8",
            "--sweep",
            "n=8..16",
            "--eps",
            "0.1,0.3",
            "--mode",
            "lorasp",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<String>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    let keys: Vec<(String, String)> = rows.iter().map(|r| (r[0].clone(), r[3].clone())).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn json_report_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let out = bin()
        .args([
            "--problem",
            "poisson2d:k=8",
            "--mode",
            "gc-constant",
            "--out",
            path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(v[0]["record"]["converged"].as_bool().unwrap());
    assert!(v[0]["report"]["residual_history"].is_array());
}
