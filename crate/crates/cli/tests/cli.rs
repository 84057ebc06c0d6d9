use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mant_core::codec::container::{read_quantized, read_tensor};
use tempfile::TempDir;

fn mant(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mant"))
        .args(args)
        .env_remove("MANT_LOG")
        .output()
        .expect("binary runs")
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &TempDir, name: &str, dims: &str, dist: &str) -> PathBuf {
    let out = p(dir, name);
    let o = mant(&["gen-tensor", "--dims", dims, "--dist", dist, "--seed", "7", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn fit_grid_reports_coefficients() {
    let o = mant(&["fit-grid", "--kind", "nf"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let a = v["a"].as_u64().unwrap();
    assert!((22..=28).contains(&a));
    let o = mant(&["fit-grid", "--kind", "pot", "--format", "csv"]);
    assert!(String::from_utf8(o.stdout).unwrap().lines().count() >= 2);
}

#[test]
fn exit_codes() {
    assert_eq!(mant(&["fit-grid", "--kind", "bogus"]).status.code(), Some(2));
    assert_eq!(mant(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(mant(&["dequantize", "--input", "/nonexistent", "--out", "/tmp/x"]).status.code(), Some(2));
    assert_eq!(mant(&["gemm-check", "--random", "8,64,8"]).status.code(), Some(0));
    assert_eq!(mant(&["gemm-check", "--random", "8,64,8", "--threshold=-1"]).status.code(), Some(1));
    let quick = ["kv-run", "--heads", "1", "--head-dim", "32", "--group-size", "32", "--prefill", "64", "--steps", "8"];
    let mut strict = quick.to_vec();
    strict.extend(["--threshold", "1.01"]);
    assert_eq!(mant(&strict).status.code(), Some(1));
    let mut lax = quick.to_vec();
    lax.extend(["--threshold", "0.5"]);
    assert_eq!(mant(&lax).status.code(), Some(0));
    let mut misaligned = quick.to_vec();
    misaligned[8] = "65";
    assert_eq!(mant(&misaligned).status.code(), Some(2));
}

#[test]
fn quantize_round_trip_is_idempotent() {
    let dir = TempDir::new().unwrap();
    let w = gen(&dir, "w.mntt", "130,24", "laplace");
    let a = gen(&dir, "a.mntt", "12,200", "student-t");
    for (input, role) in [(&w, "weight"), (&a, "activation")] {
        let q1 = p(&dir, &format!("{role}1.mntq"));
        let d1 = p(&dir, &format!("{role}1.mntt"));
        let q2 = p(&dir, &format!("{role}2.mntq"));
        assert!(mant(&["quantize", "--input", s(input), "--role", role, "--out", s(&q1)]).status.success());
        assert!(mant(&["dequantize", "--input", s(&q1), "--out", s(&d1)]).status.success());
        assert!(mant(&["quantize", "--input", s(&d1), "--role", role, "--out", s(&q2)]).status.success());
        assert_eq!(fs::read(&q1).unwrap(), fs::read(&q2).unwrap(), "{role}");
    }
}

#[test]
fn stats_mse_matches_recomputation() {
    let dir = TempDir::new().unwrap();
    let w = gen(&dir, "w.mntt", "128,16", "gaussian");
    let q = p(&dir, "w.mntq");
    let stats = p(&dir, "stats.json");
    let o = mant(&["quantize", "--input", s(&w), "--role", "weight", "--out", s(&q), "--stats", s(&stats)]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&stats).unwrap()).unwrap();
    let orig = read_tensor(&mut fs::read(&w).unwrap().as_slice()).unwrap();
    let deq = read_quantized(&mut fs::read(&q).unwrap().as_slice()).unwrap().dequantize().unwrap();
    let mse = orig
        .data()
        .iter()
        .zip(deq.data())
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
        .sum::<f64>()
        / orig.len() as f64;
    assert!((v["mse"].as_f64().unwrap() - mse).abs() <= 1e-12 * mse.max(1e-30));
    let counted: u64 = v["histogram"].as_array().unwrap().iter().map(|e| e["count"].as_u64().unwrap()).sum();
    assert_eq!(counted, v["groups"].as_u64().unwrap());
    assert_eq!(v["groups"].as_u64().unwrap(), 2 * 16);
}

#[test]
fn gemm_check_on_files() {
    let dir = TempDir::new().unwrap();
    let x = gen(&dir, "x.mntt", "16,128", "gaussian");
    let w = gen(&dir, "w.mntt", "128,8", "laplace");
    let (xq, wq) = (p(&dir, "x.mntq"), p(&dir, "w.mntq"));
    assert!(mant(&["quantize", "--input", s(&x), "--role", "activation", "--out", s(&xq)]).status.success());
    assert!(mant(&["quantize", "--input", s(&w), "--role", "weight", "--calib", s(&x), "--out", s(&wq)]).status.success());
    let o = mant(&["gemm-check", "--x", s(&xq), "--w", s(&wq)]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["max_relative_error"].as_f64().unwrap() <= 1e-6);
    let o = mant(&["gemm-check", "--x", s(&wq), "--w", s(&xq)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sim_reports_schema_errors_with_location() {
    let dir = TempDir::new().unwrap();
    let bad = p(&dir, "bad.json");
    fs::write(&bad, "{\n  \"name\": \"x\",\n  \"layers\": [\n    {\"type\": \"gemm\", \"name\": \"q\", \"m\": 1, \"k\": 64}\n  ]\n}\n").unwrap();
    let o = mant(&["sim", "--workload", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line"), "{err}");
    assert!(err.contains("missing field `n`"), "{err}");

    let good = p(&dir, "good.json");
    fs::write(&good, "{\"name\": \"w\", \"layers\": [{\"type\": \"gemm\", \"name\": \"q\", \"m\": 16, \"k\": 256, \"n\": 256}, {\"type\": \"attention\", \"name\": \"a\", \"seq_len\": 512, \"heads\": 8, \"head_dim\": 64}]}").unwrap();
    let o = mant(&["sim", "--workload", s(&good), "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().lines().count() >= 2);
}

#[test]
fn calibrate_then_kv_run_with_tables() {
    let dir = TempDir::new().unwrap();
    let tables = p(&dir, "tables.json");
    let o = mant(&["calibrate", "--head-dim", "32", "--group-size", "32", "--heads", "2", "--out", s(&tables)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = mant(&[
        "kv-run", "--heads", "2", "--head-dim", "32", "--group-size", "32", "--prefill", "64", "--steps", "32",
        "--table", s(&tables), "--threshold", "0.5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["steps"].as_array().unwrap().len(), 32);
    assert_eq!(v["flushes"].as_u64().unwrap(), 2);
}
