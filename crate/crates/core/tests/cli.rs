use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn psmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psmm")).args(args).output().expect("spawn psmm")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &TempDir, name: &str, n: usize, d: usize, seed: u64) -> PathBuf {
    let out = path(dir, name);
    let res = psmm(&["simulate", "--model", "1", "--n", &n.to_string(), "--d", &d.to_string(), "--seed", &seed.to_string(), "--output", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    out
}

#[test]
fn simulate_layout_and_determinism() {
    let dir = TempDir::new().unwrap();
    let a = simulate(&dir, "a.mds1", 4, 2, 5);
    let b = simulate(&dir, "b.mds1", 4, 2, 5);
    let bytes = std::fs::read(&a).unwrap();
    let header = bytes.iter().position(|&c| c == b'\n').unwrap() + 1;
    assert_eq!(bytes.len(), header + 8 * 4 * (4 + 1));
    assert_eq!(bytes, std::fs::read(&b).unwrap());

    let truth = path(&dir, "truth.json");
    let res = psmm(&["simulate", "--model", "3", "--n", "10", "--d", "3", "--output", s(&path(&dir, "c.csv")), "--format", "csv", "--truth", s(&truth)]);
    assert_eq!(code(&res), 0);
    let t: serde_json::Value = serde_json::from_slice(&std::fs::read(&truth).unwrap()).unwrap();
    assert_eq!(t["row_basis"].as_array().unwrap().len(), 2);

    let bad = psmm(&["simulate", "--model", "4", "--n", "4", "--d", "2", "--output", s(&path(&dir, "x"))]);
    assert_eq!(code(&bad), 2);
    assert_eq!(stderr(&bad).lines().count(), 1);
}

#[test]
fn fit_is_deterministic_and_validates() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "m.mds1", 200, 4, 7);
    let (e1, e2) = (path(&dir, "e1.json"), path(&dir, "e2.json"));
    for e in [&e1, &e2] {
        let res = psmm(&["fit", "--input", s(&data), "--seed", "7", "--output", s(e)]);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
    }
    assert_eq!(std::fs::read(&e1).unwrap(), std::fs::read(&e2).unwrap());
    let est: serde_json::Value = serde_json::from_slice(&std::fs::read(&e1).unwrap()).unwrap();
    assert_eq!(est["format_version"], 1);
    assert_eq!(est["config"]["seed"], 7);

    let res = psmm(&["fit", "--input", s(&data), "--slices", "1", "--output", s(&path(&dir, "x.json"))]);
    assert_eq!(code(&res), 2);
    let msg = stderr(&res);
    assert!(msg.contains("H >= 2") && msg.lines().count() == 1, "{msg}");

    let res = psmm(&["fit", "--input", s(&path(&dir, "missing")), "--output", s(&path(&dir, "x.json"))]);
    assert_eq!(code(&res), 2);
    std::fs::write(path(&dir, "junk"), b"{not json\n").unwrap();
    let res = psmm(&["fit", "--input", s(&path(&dir, "junk")), "--output", s(&path(&dir, "x.json"))]);
    assert_eq!(code(&res), 2);
}

#[test]
fn full_dimension_reduce_reproduces_inputs() {
    let dir = TempDir::new().unwrap();
    let csv = path(&dir, "d.csv");
    let mut text = String::from("y,x_1_1,x_1_2,x_2_1,x_2_2\n");
    for i in 0..40 {
        let v = i as f64 * 0.37;
        text += &format!("{},{},{},{},{}\n", v.sin(), v.cos(), (2.0 * v).sin(), v * 0.1 - 1.0, (v * 1.3).cos());
    }
    std::fs::write(&csv, text).unwrap();
    let est = path(&dir, "e.json");
    let res = psmm(&["fit", "--input", s(&csv), "--r1", "2", "--r2", "2", "--slices", "4", "--output", s(&est)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let out = path(&dir, "r.csv");
    let res = psmm(&["reduce", "--input", s(&csv), "--model", s(&est), "--output", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));

    let mut input = csv::Reader::from_path(&csv).unwrap();
    let mut reduced = csv::Reader::from_path(&out).unwrap();
    assert_eq!(reduced.headers().unwrap(), vec!["sample_index", "v_1_1", "v_1_2", "v_2_1", "v_2_2"]);
    for (a, b) in input.records().zip(reduced.records()) {
        let (a, b) = (a.unwrap(), b.unwrap());
        for k in 1..5 {
            let x: f64 = a[k].parse().unwrap();
            let v: f64 = b[k].parse().unwrap();
            assert!((x - v).abs() <= 1e-12, "{x} vs {v}");
        }
    }
}

#[test]
fn reduce_errors_and_symmetric_columns() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "m.mds1", 150, 3, 1);
    let est = path(&dir, "e.json");
    let res = psmm(&["fit", "--input", s(&data), "--symmetric", "--r1", "2", "--output", s(&est)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let out = path(&dir, "r.csv");
    assert_eq!(code(&psmm(&["reduce", "--input", s(&data), "--model", s(&est), "--output", s(&out)])), 0);
    let header = std::fs::read_to_string(&out).unwrap().lines().next().unwrap().to_string();
    assert!(header.ends_with(",v1,v2,v3"), "{header}");

    let other = simulate(&dir, "o.mds1", 20, 4, 1);
    let res = psmm(&["reduce", "--input", s(&other), "--model", s(&est), "--output", s(&out)]);
    assert_eq!(code(&res), 2);

    let empty = path(&dir, "empty.csv");
    std::fs::write(&empty, "x_1_1,x_1_2,x_1_3\n").unwrap();
    let res = psmm(&["reduce", "--input", s(&empty), "--model", s(&est), "--output", s(&out)]);
    assert_eq!(code(&res), 2);
}

#[test]
fn benchmark_rows_and_jobs_invariance() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str, jobs: &str| {
        let out = path(&dir, name);
        let res = psmm(&[
            "benchmark", "--models", "1", "--methods", "psmm", "--n", "60", "--d", "3", "--replicates", "3",
            "--seed", "4", "--jobs", jobs, "--output", s(&out),
        ]);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
        std::fs::read_to_string(out).unwrap()
    };
    let one = run("a.csv", "1");
    assert_eq!(one.lines().count(), 4);
    assert_eq!(one.lines().next().unwrap(), "model,method,n,d,replicate,distance,runtime_seconds,r1,r2,status");
    assert_eq!(one, run("b.csv", "3"));
    let res = psmm(&["benchmark", "--methods", "svm", "--output", s(&path(&dir, "c.csv"))]);
    assert_eq!(code(&res), 2);
}

#[test]
fn cov_outputs_and_exit_codes() {
    let dir = TempDir::new().unwrap();
    let vec_data = path(&dir, "v.csv");
    std::fs::write(&vec_data, "x_1_1,x_2_1\n1,2\n3,1\n0,0.5\n2,2\n").unwrap();
    let out = path(&dir, "c.json");
    let res = psmm(&["cov", "--input", s(&vec_data), "--output", s(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let c: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(c["sigma_col"], serde_json::json!([[1.0]]));
    assert_eq!(c["converged"], true);

    let wide = path(&dir, "w.csv");
    std::fs::write(&wide, "x_1_1,x_1_2,x_1_3,x_1_4\n1,2,3,4\n2,1,0,3\n").unwrap();
    let res = psmm(&["cov", "--input", s(&wide), "--output", s(&out)]);
    assert_eq!(code(&res), 2);
    assert!(stderr(&res).contains("max(d1/d2, d2/d1) + 1"), "{}", stderr(&res));

    let same = path(&dir, "s.csv");
    std::fs::write(&same, "x_1_1,x_1_2,x_2_1,x_2_2\n1,2,3,4\n1,2,3,4\n1,2,3,4\n1,2,3,4\n").unwrap();
    let res = psmm(&["cov", "--input", s(&same), "--output", s(&out)]);
    assert_eq!(code(&res), 3, "{}", stderr(&res));
    assert!(stderr(&res).contains("singular"), "{}", stderr(&res));
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(&psmm(&["--help"])), 0);
    assert_eq!(code(&psmm(&["fit", "--help"])), 0);
    assert_eq!(code(&psmm(&[])), 2);
}
