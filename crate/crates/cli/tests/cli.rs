//! End-to-end checks of the binary: exit codes, artifact shapes, and the
//! wiring between subcommands. Statistical behavior lives in acceptance.rs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_edpgp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn edpgp")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .count()
        .saturating_sub(1) // header
}

/// Lines in a draw store: one JSON header plus one record per draw.
fn store_draws(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.is_empty()).count() - 1
}

fn simulate_small(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("sim.csv");
    let out = run(&[
        "simulate", "--n", "60", "--pdelta", "0.2", "--seed", "5",
        "--out", data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "simulate failed: {}", String::from_utf8_lossy(&out.stderr));
    data
}

fn fit_small(dir: &Path, data: &Path) -> std::path::PathBuf {
    let draws = dir.join("draws.jsonl");
    let out = run(&[
        "fit", "--data", data.to_str().unwrap(), "--iters", "200", "--burnin", "100",
        "--thin", "2", "--seed", "11", "--out", draws.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "fit failed: {}", String::from_utf8_lossy(&out.stderr));
    draws
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(code(&run(&["frobnicate"])), 64);
    assert_eq!(code(&run(&["simulate", "--does-not-exist", "1"])), 64);
    assert_eq!(code(&run(&[])), 64);
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["fit", "--help"])), 0);
}

#[test]
fn simulate_writes_dataset_and_truth_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_small(dir.path());
    let text = fs::read_to_string(&data).unwrap();
    assert!(text.starts_with("# simulated:"), "missing provenance comment");
    assert!(text.lines().any(|l| l == "y,t,delta,a,l1"));
    assert_eq!(data_rows(&data), 60);

    let truth = dir.path().join("sim.truth.csv");
    assert!(truth.exists(), "default truth sidecar missing");
    assert_eq!(data_rows(&truth), 60);

    // Both artifacts round-trip through summarize.
    assert_eq!(code(&run(&["summarize", "--input", data.to_str().unwrap()])), 0);
    assert_eq!(code(&run(&["summarize", "--input", truth.to_str().unwrap()])), 0);
}

#[test]
fn simulate_rejects_bad_probability() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate", "--n", "10", "--pc", "1.5",
        "--out", dir.path().join("x.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn fit_store_and_estimate_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_small(dir.path());
    let draws = fit_small(dir.path(), &data);
    // iters 200, burnin 100, thin 2 -> 50 retained draws
    assert_eq!(store_draws(&draws), 50);
    assert_eq!(code(&run(&["summarize", "--input", draws.to_str().unwrap()])), 0);

    let est = dir.path().join("est");
    let out = run(&[
        "estimate", "--draws", draws.to_str().unwrap(), "--kappa", "1.5",
        "--out-dir", est.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "estimate failed: {}", String::from_utf8_lossy(&out.stderr));

    assert_eq!(data_rows(&est.join("nmb_draws.csv")), 50);
    assert_eq!(data_rows(&est.join("nmb.csv")), 1);
    let nmb = fs::read_to_string(est.join("nmb.csv")).unwrap();
    let row = nmb.lines().find(|l| l.starts_with("1.5,")).expect("kappa echoed in nmb.csv");
    assert_eq!(row.split(',').count(), 4);
    // ceac has one row per kappa_grid point (default 0..=2 step 0.2)
    assert_eq!(data_rows(&est.join("ceac.csv")), 11);
    assert_eq!(data_rows(&est.join("ite.csv")), 60);
    assert_eq!(data_rows(&est.join("icer.csv")), 1);
    assert!(est.join("icer_draws.csv").exists());
    assert!(est.join("hazard_summary.csv").exists());
}

#[test]
fn subgroups_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_small(dir.path());
    let draws = fit_small(dir.path(), &data);
    let sub = dir.path().join("sub");
    let out = run(&["subgroups", "--draws", draws.to_str().unwrap(), "--out-dir", sub.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "subgroups failed: {}", String::from_utf8_lossy(&out.stderr));

    assert_eq!(data_rows(&sub.join("mode_partition.csv")), 60);
    assert_eq!(data_rows(&sub.join("dsi_draws.csv")), 50);
    assert_eq!(data_rows(&sub.join("graph_nodes.csv")), 60);
    assert!(sub.join("coclust.csv").exists());
    assert!(sub.join("coclust_outer.csv").exists());
    assert!(sub.join("graph_edges.csv").exists());
    assert!(sub.join("cluster_profile.csv").exists());
}

#[test]
fn multi_chain_pools_draws() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_small(dir.path());
    let draws = dir.path().join("pooled.jsonl");
    let out = run(&[
        "fit", "--data", data.to_str().unwrap(), "--iters", "200", "--burnin", "100",
        "--thin", "2", "--seed", "11", "--chains", "2", "--out", draws.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "fit failed: {}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(store_draws(&draws), 100);
}

#[test]
fn bad_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_small(dir.path());
    let out = run(&[
        "fit", "--data", data.to_str().unwrap(), "--set", "not_a_key=3",
        "--out", dir.path().join("x.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn summarize_rejects_unknown_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mystery.txt");
    fs::write(&path, "this is not an artifact\n").unwrap();
    assert_eq!(code(&run(&["summarize", "--input", path.to_str().unwrap()])), 1);
}

#[test]
fn plot_data_requires_existing_store() {
    let out = run(&["plot-data", "--kind", "dsi", "--draws", "/nonexistent/d.jsonl", "--out", "/tmp/x.csv"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn plot_data_kinds_emit_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_small(dir.path());
    let draws = fit_small(dir.path(), &data);
    for kind in ["dsi", "prior-hazard", "ite", "predictive"] {
        let out_path = dir.path().join(format!("{kind}.csv"));
        let out = run(&[
            "plot-data", "--kind", kind, "--draws", draws.to_str().unwrap(),
            "--out", out_path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "plot-data {kind}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(data_rows(&out_path) > 0, "plot-data {kind} wrote no rows");
    }
}
