use std::path::PathBuf;
use std::process::{Command, Output};

use markovize_cli::config::{parse_header, RunConfig};

fn nmarkov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmarkov"))
        .args(args)
        .env_remove("NMARKOV_SEED")
        .env_remove("NMARKOV_THREADS")
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nmarkov-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(nmarkov(&["--help"]).status.code(), Some(0));
    let out = nmarkov(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn malformed_arguments_exit_two() {
    assert_eq!(
        nmarkov(&["bound-sweep", "--t", "5..2"]).status.code(),
        Some(2)
    );
    assert_eq!(
        nmarkov(&["bound-sweep", "--delta", "x"]).status.code(),
        Some(2)
    );
    assert_eq!(nmarkov(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(
        nmarkov(&["validate", "--only", "nope"]).status.code(),
        Some(2)
    );
}

#[test]
fn oversized_dilation_exits_four() {
    let out = nmarkov(&["sample", "--log2-de", "20", "--k", "1", "--samples", "1"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn corrupted_circuit_fails_validation() {
    let out = nmarkov(&["validate", "--only", "circuit-integrity", "--corrupt-phase"]);
    assert_eq!(out.status.code(), Some(3));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        text.contains("FAIL") && text.contains("unitarity"),
        "{text}"
    );
}

#[test]
fn sample_output_is_reproducible_and_self_describing() {
    let args = [
        "sample",
        "--log2-de",
        "2",
        "--k",
        "1",
        "--samples",
        "20",
        "--seed",
        "11",
    ];
    let a = scratch("a.csv");
    let b = scratch("b.csv");
    let run = |path: &PathBuf, threads: &str| {
        let mut full: Vec<&str> = args.to_vec();
        full.extend(["--threads", threads, "-o", path.to_str().unwrap()]);
        assert_eq!(nmarkov(&full).status.code(), Some(0));
        std::fs::read_to_string(path).unwrap()
    };
    let one = run(&a, "1");
    let four = run(&b, "4");
    assert_eq!(one, four);
    assert_eq!(one.lines().filter(|l| !l.starts_with('#')).count(), 21);

    let RunConfig::Sample(config) = parse_header(&one).unwrap() else {
        panic!("header names another command")
    };
    assert_eq!(config.samples, 20);
    assert_eq!(config.ensemble.seed, 11);
}

#[test]
fn seed_is_read_from_the_environment() {
    let out = |seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_nmarkov"));
        cmd.args(["sample", "--log2-de", "1", "--k", "0", "--samples", "3"]);
        cmd.env_remove("NMARKOV_SEED");
        if let Some(s) = seed {
            cmd.env("NMARKOV_SEED", s);
        }
        cmd.output().unwrap().stdout
    };
    let flag = nmarkov(&[
        "sample",
        "--log2-de",
        "1",
        "--k",
        "0",
        "--samples",
        "3",
        "--seed",
        "5",
    ]);
    assert_eq!(out(Some("5")), flag.stdout);
    assert_ne!(out(None), flag.stdout);
}

#[test]
fn bound_sweep_prints_one_row_per_tuple() {
    let out = nmarkov(&[
        "bound-sweep",
        "--t",
        "2..3",
        "--k",
        "1",
        "--log2-de",
        "10..12",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(
        rows[0],
        "log2_dE,k,t,delta,epsilon,m_star,log2_Bnu,Bnu_clamped"
    );
    assert_eq!(rows.len(), 1 + 2 * 3);
}
