//! Binary-level tests: exit codes, diagnostics, and the determinism
//! contract (identical arguments and seed give byte-identical output).

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_treegrow"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tmp(name: &str) -> PathBuf {
    let mut p = std::env::temp_dir();
    p.push(format!("treegrow-test-{}-{name}", std::process::id()));
    p
}

#[test]
fn grow_is_deterministic_and_member() {
    let a = run(&["grow", "--model", "marchal", "--alpha", "1.7", "--n", "40", "--seed", "9"]);
    let b = run(&["grow", "--model", "marchal", "--alpha", "1.7", "--n", "40", "--seed", "9"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let lines: Vec<&str> = std::str::from_utf8(&a.stdout).unwrap().lines().collect();
    assert_eq!(lines.len(), 40);
    let last = treegrow::PlaneTree::decode(lines[39]).unwrap();
    assert!(last.validate_membership(40).is_empty());
}

#[test]
fn alpha_out_of_range_is_a_single_line_diagnostic() {
    let out = run(&["grow", "--model", "marchal", "--alpha", "3", "--n", "5"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: range:"), "{err}");
}

#[test]
fn validate_ip_pass_and_fail() {
    let ok = run(&["validate-ip", "interval"]);
    assert!(ok.status.success());
    let cfg = tmp("bad.json");
    std::fs::write(
        &cfg,
        r#"{"vertices": 2, "segments": [{"parent": 0, "child": 1,
            "profile": [[0.0, 0.0], [0.5, 1.0]]}]}"#,
    )
    .unwrap();
    let bad = run(&["validate-ip", cfg.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    let err = String::from_utf8(bad.stderr).unwrap();
    assert!(err.contains("spacing violated"), "{err}");
    std::fs::remove_file(cfg).ok();
}

#[test]
fn pipeline_grow_trim_gp_is_byte_identical_across_runs() {
    let trees = tmp("trees.jsonl");
    let spaces = tmp("spaces.jsonl");
    let go = || {
        let out = run(&[
            "sample", "--ip-config", "interval", "--n", "12", "--seed", "4", "--out",
            trees.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{:?}", out);
        // The chain starts at the one-leaf tree, which cannot be trimmed.
        let all = std::fs::read_to_string(&trees).unwrap();
        let rest: Vec<&str> = all.lines().skip(1).collect();
        std::fs::write(&trees, rest.join("\n")).unwrap();
        let out = run(&["trim", "--in", trees.to_str().unwrap(), "--out", spaces.to_str().unwrap()]);
        assert!(out.status.success(), "{:?}", out);
        std::fs::read(&spaces).unwrap()
    };
    let first = go();
    let second = go();
    assert_eq!(first, second);

    // Feed two of the spaces to the gp subcommand.
    let content = String::from_utf8(first).unwrap();
    let lines: Vec<&str> = content.lines().collect();
    let a = tmp("a.json");
    let b = tmp("b.json");
    std::fs::write(&a, lines[2]).unwrap();
    std::fs::write(&b, lines[5]).unwrap();
    let out = run(&["gp", "--bound", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(out.status.success());
    let eps: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!((0.0..=1.0).contains(&eps));
    for f in [trees, spaces, a, b] {
        std::fs::remove_file(f).ok();
    }
}

#[test]
fn gp_exact_size_cap_surfaces() {
    let a = tmp("cap-a.json");
    let six = r#"{"dist":[[0,1,1,1,1,1],[1,0,1,1,1,1],[1,1,0,1,1,1],[1,1,1,0,1,1],[1,1,1,1,0,1],[1,1,1,1,1,0]],
        "weights":[0.167,0.167,0.167,0.167,0.166,0.166],"root":0}"#;
    std::fs::write(&a, six).unwrap();
    let out = run(&["gp", "--exact", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("size cap"), "{err}");
    std::fs::remove_file(a).ok();
}

#[test]
fn dendritic_check_accepts_sampler_output() {
    let trees = tmp("labelled.jsonl");
    let out = run(&[
        "sample", "--ip-config", "atom-line", "--n", "15", "--seed", "2", "--labelled",
        "--out", trees.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out = run(&["dendritic", "check", trees.to_str().unwrap()]);
    assert!(out.status.success(), "{:?}", out);
    std::fs::remove_file(trees).ok();
}

#[test]
fn experiment_csv_is_deterministic_under_threads() {
    let csv1 = tmp("exp1.csv");
    let csv2 = tmp("exp2.csv");
    let out = run(&[
        "experiment", "--config", "interval", "--ns", "30,60", "--reps", "4", "--seed", "3",
        "--threads", "1", "--csv", csv1.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{:?}", out);
    let out = run(&[
        "experiment", "--config", "interval", "--ns", "30,60", "--reps", "4", "--seed", "3",
        "--threads", "4", "--csv", csv2.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let a = std::fs::read(&csv1).unwrap();
    let b = std::fs::read(&csv2).unwrap();
    assert_eq!(a, b, "parallel replicates must not change the bytes");
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("n,rep,discrepancy,gp_bound,pass\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 4);
    std::fs::remove_file(csv1).ok();
    std::fs::remove_file(csv2).ok();
}

#[test]
fn seed_env_var_is_the_default() {
    let with_flag = run(&["grow", "--model", "patricia", "--ell", "3", "--n", "6", "--seed", "77"]);
    let with_env = bin()
        .args(["grow", "--model", "patricia", "--ell", "3", "--n", "6"])
        .env("TREEGROW_SEED", "77")
        .output()
        .unwrap();
    assert!(with_flag.status.success());
    assert_eq!(with_flag.stdout, with_env.stdout);
}

#[test]
fn backward_floor_error() {
    let trees = tmp("unit.jsonl");
    std::fs::write(&trees, "[\"\",\"0\"]\n").unwrap();
    let out = run(&["backward", "--in", trees.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("floor"));
    std::fs::remove_file(trees).ok();
}
