//! End-to-end runs of the command-line binary.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nonprob_pel::data::{write_nonprob_sample, write_prob_sample};
use nonprob_pel::sim::{build_design, draw_samples, ScenarioConfig};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nonprob-pel"));
    c.env_remove("NONPROB_PEL_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn toy_files(dir: &Path) -> (PathBuf, PathBuf) {
    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    std::fs::write(&a, "y,x1,pi\n1,0.1,0.5\n0,0.4,0.25\n1,0.2,0.5\n1,0.9,0.25\n").unwrap();
    std::fs::write(&b, "x1,w\n0.3,5\n0.6,5\n").unwrap();
    (a, b)
}

/// Writes one replication of the TT design to CSV files.
fn simulated_files(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = ScenarioConfig::preset("TT").unwrap();
    let design = build_design(&cfg, None).unwrap();
    let (a, b) = draw_samples(&cfg, &design, 0).unwrap();
    let pa = dir.join("nonprob.csv");
    let pb = dir.join("prob.csv");
    write_nonprob_sample(File::create(&pa).unwrap(), &a, "y", &["x1", "x2", "x3"]).unwrap();
    write_prob_sample(File::create(&pb).unwrap(), &b, "w", &["x1", "x2", "x3"]).unwrap();
    (pa, pb)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn toy_hajek_estimate_with_known_scores() {
    let dir = TempDir::new().unwrap();
    let (a, b) = toy_files(dir.path());
    let o = run(&[
        "--command", "estimate", "--nonprob", p(&a), "--prob", p(&b), "--x", "x1", "--scores", "pi",
        "--methods", "ipw1,ipw2", "--N", "10", "--format", "jsonl",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut seen = 0;
    for line in stdout(&o).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let est = v["estimate"].as_f64().unwrap();
        match v["method"].as_str().unwrap() {
            // Σ y/π = 2 + 0 + 2 + 4 = 8 over N = 10 and N̂ = Σ 1/π = 12.
            "ipw1" => assert!((est - 0.8).abs() < 1e-12),
            "ipw2" => assert!((est - 8.0 / 12.0).abs() < 1e-12),
            other => panic!("unexpected method {other}"),
        }
        seen += 1;
    }
    assert_eq!(seen, 2);
}

#[test]
fn missing_weight_column_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let (a, b) = toy_files(dir.path());
    let o = run(&[
        "--command", "estimate", "--nonprob", p(&a), "--prob", p(&b), "--x", "x1", "--weight", "design_wt",
        "--scores", "pi", "--methods", "ipw2",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("design_wt"), "{}", stderr(&o));
}

#[test]
fn estimate_requires_both_files() {
    let o = run(&["--command", "estimate", "--x", "x1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn repeated_seed_gives_identical_bootstrap_output() {
    let dir = TempDir::new().unwrap();
    let (a, b) = simulated_files(dir.path());
    let args = [
        "--command", "estimate", "--nonprob", p(&a), "--prob", p(&b), "--x", "x1,x2,x3",
        "--methods", "pel,pel2_adj,pel2_bts,na2,bst", "--K", "200", "--seed", "31", "--format", "jsonl",
    ];
    let first = run(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    let second = bin().args(args).env("NONPROB_PEL_THREADS", "1").output().unwrap();
    assert_eq!(stdout(&first), stdout(&second));
    assert_eq!(stdout(&first).lines().count(), 5);
    let other = run(&[
        "--command", "estimate", "--nonprob", p(&a), "--prob", p(&b), "--x", "x1,x2,x3",
        "--methods", "pel2_bts", "--K", "200", "--seed", "32", "--format", "jsonl",
    ]);
    assert!(other.status.success());
    assert!(!stdout(&first).contains(stdout(&other).trim()));
}

#[test]
fn text_report_lists_intervals_with_diagnostics() {
    let dir = TempDir::new().unwrap();
    let (a, b) = simulated_files(dir.path());
    let o = run(&[
        "--command", "estimate", "--nonprob", p(&a), "--prob", p(&b), "--x", "x1,x2,x3", "--K", "200",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for tag in ["ipw2", "dr2", "pel", "pel1_adj", "pel1_bts", "pel2_adj", "pel2_bts", "na1", "na2", "bst"] {
        assert!(text.contains(tag), "missing {tag} in\n{text}");
    }
}

#[test]
fn simulate_smoke_run_prints_seven_rows() {
    let o = run(&[
        "--command", "simulate", "--scenario", "TT", "--reps", "2", "--K", "50", "--N", "3000", "--n_A", "100",
        "--n_B", "100", "--format", "csv",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<_> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 7, "{text}");
    for r in rows {
        // K = 50 is enough for the bootstrap variance but not for quantiles.
        let quantile_based = ["pel1_bts", "pel2_bts", "bst"].contains(&&r[0]);
        let completed: usize = r[5].parse().unwrap();
        assert_eq!(completed == 0, quantile_based, "{:?}", r);
        if !quantile_based {
            let total: f64 = (1..4).map(|j| r[j].parse::<f64>().unwrap()).sum();
            assert!((total - 100.0).abs() < 0.02);
        }
    }
}

#[test]
fn simulate_reads_a_scenario_file() {
    let dir = TempDir::new().unwrap();
    let mut cfg = ScenarioConfig::preset("FT").unwrap();
    cfg.n_pop = 2000;
    cfg.n_a = 80;
    cfg.n_b = 80;
    cfg.reps = 2;
    cfg.k = 50;
    let path = dir.path().join("ft.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let o = run(&["--command", "simulate", "--scenario", p(&path), "--format", "jsonl"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 7);
}

#[test]
fn invalid_scenario_is_an_input_error() {
    let o = run(&["--command", "simulate", "--scenario", "XX", "--reps", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("XX"), "{}", stderr(&o));
    let o = run(&["--command", "simulate", "--scenario", "TT", "--level", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
}
