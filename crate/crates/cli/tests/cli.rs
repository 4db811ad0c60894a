use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn umiclust(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_umiclust"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, extra: &[&str]) {
    let m = dir.join("m.mtx");
    let l = dir.join("truth.csv");
    let mut args = vec![
        "gen", "--clusters", "2", "--cells", "40", "--genes", "20", "--reads", "300", "--seed", "4",
        "--out-matrix", path(&m), "--out-labels", path(&l),
    ];
    args.extend_from_slice(extra);
    let out = umiclust(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_input_is_a_usage_error() {
    assert_eq!(umiclust(&["cluster"]).status.code(), Some(2));
}

#[test]
fn help_exits_cleanly() {
    let out = umiclust(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("cluster"));
}

#[test]
fn generate_then_cluster() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let labels = dir.path().join("pred.csv");
    let report = dir.path().join("report.json");
    let out = umiclust(&[
        "cluster", "--input", path(&dir.path().join("m.mtx")), "--iters", "20", "--burn-in", "5",
        "--threads", "2", "--seed", "3", "--out-labels", path(&labels), "--out-report", path(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&labels).unwrap();
    assert_eq!(text.lines().next(), Some("cell,cluster"));
    assert_eq!(text.lines().count(), 41);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["trace"].as_array().unwrap().len(), 20);
    assert_eq!(v["config"]["seed"], 3);
}

#[test]
fn same_seed_gives_identical_labels() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let run = |name: &str, threads: &str| {
        let p = dir.path().join(name);
        let out = umiclust(&[
            "cluster", "--input", path(&dir.path().join("m.mtx")), "--iters", "15", "--burn-in", "3",
            "--seed", "9", "--threads", threads, "--out-labels", path(&p),
        ]);
        assert!(out.status.success());
        fs::read(p).unwrap()
    };
    let a = run("a.csv", "1");
    assert_eq!(a, run("b.csv", "1"));
    assert_eq!(a, run("c.csv", "4"));
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# sampler\niters = 7\nburn_in = 2\nseed = 5\n").unwrap();
    let report = dir.path().join("r.json");
    let out = umiclust(&[
        "cluster", "--input", path(&dir.path().join("m.mtx")), "--config", path(&cfg), "--threads", "1",
        "--out-report", path(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["trace"].as_array().unwrap().len(), 7);

    fs::write(&cfg, "itters = 7\n").unwrap();
    let out = umiclust(&["cluster", "--input", path(&dir.path().join("m.mtx")), "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_identical_labels() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let t = dir.path().join("truth.csv");
    let out = umiclust(&["eval", path(&t), path(&t)]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v, serde_json::json!({"ari": 1.0, "ri": 1.0, "hi": 1.0}));
}

#[test]
fn eval_length_mismatch_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "cell,cluster\n0,0\n1,1\n2,1\n").unwrap();
    fs::write(&b, "cell,cluster\n0,0\n1,1\n").unwrap();
    assert_eq!(umiclust(&["eval", path(&a), path(&b)]).status.code(), Some(3));
}

#[test]
fn malformed_matrix_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("bad.mtx");
    fs::write(&m, "%%MatrixMarket matrix coordinate integer general\n2 2 1\n3 1 4\n").unwrap();
    let out = umiclust(&["cluster", "--input", path(&m)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.mtx:3:"));
}

#[test]
fn out_of_range_separation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = umiclust(&[
        "gen", "--separation", "1.5", "--out-matrix", path(&dir.path().join("m.mtx")),
        "--out-labels", path(&dir.path().join("l.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stability_needs_two_runs() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let out = umiclust(&["stability", "--input", path(&dir.path().join("m.mtx")), "--runs", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stability_of_repeated_seed_is_one() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), &[]);
    let csv = dir.path().join("stab.csv");
    let out = umiclust(&[
        "stability", "--input", path(&dir.path().join("m.mtx")), "--runs", "2", "--same-seed", "--iters", "10",
        "--burn-in", "2", "--threads", "1", "--out", path(&csv),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let values: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 40);
    assert!(values.iter().all(|&v| v == 1.0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["min"], 1.0);
}

#[test]
fn csv_output_round_trips_through_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    let out = umiclust(&[
        "gen", "--cells", "12", "--genes", "6", "--clusters", "2", "--out-format", "csv", "--out-matrix", path(&m),
        "--out-labels", path(&dir.path().join("l.csv")),
    ]);
    assert!(out.status.success());
    let labels = dir.path().join("p.csv");
    let out = umiclust(&["cluster", "--input", path(&m), "--iters", "3", "--burn-in", "1", "--threads", "1", "--out-labels", path(&labels)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&labels).unwrap().lines().count(), 13);
}

#[test]
fn bench_reports_speedups() {
    let out = umiclust(&[
        "bench", "--cells", "60", "--genes", "20", "--clusters", "2", "--thread-list", "1,2", "--reps", "3", "--iters", "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["thread_counts"], serde_json::json!([1, 2]));
    assert_eq!(v["speedups"][0], 1.0);
}
