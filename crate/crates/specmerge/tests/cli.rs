//! End-to-end checks of the `specmerge` binary: subcommands, config plumbing,
//! deterministic outputs, and error reporting.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specmerge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specmerge"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

const TINY: &[&str] = &[
    "--set",
    "total_classes=8",
    "--set",
    "num_steps=4",
    "--set",
    "rho=0.1",
    "--set",
    "class_rho=0.1",
    "--set",
    "n_max=15",
    "--set",
    "test_per_class=5",
    "--set",
    "epochs=2",
];

#[test]
fn selftest_passes() {
    let out = run(&["selftest"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count() >= 6);
    assert!(!stdout.contains("[FAIL]"));
}

#[test]
fn run_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("res");
    let mut args = vec!["run", "--out", out_dir.to_str().unwrap(), "--seeds", "7"];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "config.txt",
        "summary.csv",
        "metrics_full_seed7.csv",
        "trainlog_full_seed7.txt",
        "protocol_seed7.txt",
    ] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }
    let metrics = std::fs::read_to_string(out_dir.join("metrics_full_seed7.csv")).unwrap();
    assert!(metrics.starts_with("step,acc,accum_classes\n"));
    assert!(metrics.contains("A_T,Abar,wAbar,large,middle,small"));
}

#[test]
fn config_file_round_trips_through_echo() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let mut args = vec!["run", "--out", out_a.to_str().unwrap(), "--seeds", "3"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--set", "variant=sm_ccw"]);
    assert!(run(&args).status.success());

    // Feed the emitted config back in; results must reproduce byte-for-byte.
    let out_b = dir.path().join("b");
    let config_path = out_a.join("config.txt");
    let out = run(&[
        "run",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let a = std::fs::read(out_a.join("metrics_sm_ccw_seed3.csv")).unwrap();
    let b = std::fs::read(out_b.join("metrics_sm_ccw_seed3.csv")).unwrap();
    assert_eq!(a, b);
}

fn read_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().to_string(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn ablate_is_deterministic_across_processes() {
    // Identical invocations from two working directories: every output file,
    // including the config echo, must agree byte for byte.
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for work_dir in [&out_a, &out_b] {
        std::fs::create_dir_all(work_dir).unwrap();
        let mut args = vec!["ablate", "--out", "res", "--seeds", "1,2"];
        args.extend_from_slice(TINY);
        let out = run_in(work_dir, &args);
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    let a = read_sorted(&out_a.join("res"));
    let b = read_sorted(&out_b.join("res"));
    assert_eq!(a.len(), b.len());
    for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        assert_eq!(ba, bb, "{na} differs across processes");
    }
    // Five variants by two seeds, plus summary.
    assert_eq!(a.iter().filter(|(n, _)| n.starts_with("metrics_")).count(), 10);
    assert!(a.iter().any(|(n, _)| n == "summary.csv"));
}

#[test]
fn sweep_emits_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    let mut args = vec![
        "sweep",
        "--param",
        "rho",
        "--values",
        "1.0,0.1",
        "--out",
        out_dir.to_str().unwrap(),
        "--seeds",
        "5",
    ];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("param,value,seeds"));
    assert!(lines[1].starts_with("rho,1,"));
    assert!(lines[2].starts_with("rho,0.1,"));
}

#[test]
fn bad_inputs_exit_nonzero_with_reason() {
    let out = run(&["run", "--set", "nonsense=1"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:"), "stderr was: {stderr}");

    let out = run(&["sweep", "--param", "epochs", "--values", "1,2"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochs"));

    let out = run(&["run", "--set", "variant=bogus"]);
    assert!(!out.status.success());

    let out = run(&["run", "--config", "/nonexistent/config.txt"]);
    assert!(!out.status.success());
}
