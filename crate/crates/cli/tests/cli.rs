use std::path::Path;
use std::process::{Command, Output};

fn swe_rom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swe-rom")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn flops_prints_the_operation_table() {
    let o = swe_rom(&["flops"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,k,m,p,standard-pod,tensorial-pod,pod-deim");
    assert_eq!(lines.len(), 9);
    assert_eq!(lines[1], "1000,10,10,2,31000,2990,310");
    assert_eq!(lines[8], "100000,50,100,4,25300000,937499950,25300");
}

#[test]
fn flops_single_configuration() {
    let o = swe_rom(&["flops", "--mode", "tensorial-pod", "--n", "10000", "--k", "30", "--p", "3"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().any(|l| l == "10000,30,,3,2429970"), "{}", stdout(&o));
}

#[test]
fn missing_m_for_deim_flops_is_a_config_error() {
    let o = swe_rom(&["flops", "--mode", "pod-deim", "--n", "10", "--k", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_arguments_exit_with_code_2() {
    assert_eq!(swe_rom(&["bench", "--window", "5h"]).status.code(), Some(2));
    assert_eq!(swe_rom(&["bench", "--grid", "4"]).status.code(), Some(2));
    assert_eq!(swe_rom(&["bench", "--mode", "magic"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "grids = [\"9x7\"]\nunknown_key = 1\n").unwrap();
    assert_eq!(swe_rom(&["bench", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn export_without_results_reports_nothing_to_plot() {
    let dir = tempfile::tempdir().unwrap();
    let o = swe_rom(&["export-plots", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nothing to plot"));
}

#[test]
fn rank_exceeding_k_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert!(swe_rom(&["run-full", "--grid", "9x7", "--nt", "5", "--out", out]).status.success());
    let o = swe_rom(&["build-rom", "--k", "30", "--out", out]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn offline_online_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let run = |args: &[&str]| {
        let mut all = args.to_vec();
        all.extend(["--out", out]);
        let o = swe_rom(&all);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    run(&["run-full", "--grid", "11x9", "--nt", "20"]);
    assert!(Path::new(out).join("snapshots.swesnap").exists());
    run(&["build-rom", "--k", "6", "--m", "12"]);
    for f in ["basis_u.podbas", "basis_v.podbas", "basis_phi.podbas", "tensors.tpodcf", "deim_F32.deimop"] {
        assert!(Path::new(out).join(f).exists(), "{f}");
    }
    let std = run(&["run-rom", "--mode", "standard-pod"]);
    let ten = run(&["run-rom", "--mode", "tensorial-pod"]);
    let err_line = |s: &str| s.lines().find(|l| l.starts_with("relative error")).unwrap().to_string();
    assert_eq!(err_line(&std), err_line(&ten));
    run(&["run-rom", "--mode", "pod-deim"]);
}

#[test]
fn bench_then_export() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = swe_rom(&["bench", "--grid", "11x9", "--nt", "15", "--k", "5", "--m", "8", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["run_report.csv", "spectra.csv", "deim_points.csv", "deim_fields.csv", "timing_vs_n.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let report = std::fs::read_to_string(dir.path().join("run_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 3);
    let o = swe_rom(&["export-plots", "--out", out, "--format", "svg-line"]);
    assert!(o.status.success());
    assert!(dir.path().join("timing_vs_n.svg").exists());
}
