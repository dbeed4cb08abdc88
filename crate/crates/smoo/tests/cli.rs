use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use proptest::prelude::*;
use smoo::commands::{CalibrationReport, ConstantsOutput, Summary};
use smoo::output::{parse_run_table, read_run_table, run_table_string, ArchiveEntry};
use smoo_core::math::median;
use smoo_core::optimizer::RunRow;

const TINY: &str = r#"
problem = "zdt1"
D = 4
M = 2
budget = 45
initial_size = 30
seeds = [1, 2, 3]
timing = false
pool_size = 200
n_screen = 100
k = 20

[classifier]
epochs = 30
refit_epochs = 10

[surrogate]
full_epochs = 10
warm_epochs = 3
"#;

fn smoo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smoo")).args(args).output().unwrap()
}

fn write_cfg(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_tables_and_a_consistent_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), TINY);
    let out = tmp.path().join("out");
    let o = smoo(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let tables: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("run_table_seed"))
        .collect();
    assert_eq!(tables.len(), 3);
    let summary: Summary = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let mut hv = Vec::new();
    let mut igd = Vec::new();
    for seed in [1, 2, 3] {
        let rows = read_run_table(&out.join(format!("run_table_seed{seed}.csv"))).unwrap();
        assert_eq!(rows.len(), 1 + (45 - 30) / 5);
        assert_eq!(rows.last().unwrap().evals, 45);
        hv.push(rows.last().unwrap().hv);
        igd.push(rows.last().unwrap().igd);
        let archive: Vec<ArchiveEntry> =
            serde_json::from_str(&fs::read_to_string(out.join(format!("archive_seed{seed}.json"))).unwrap()).unwrap();
        assert_eq!(archive.len(), 45);
        assert!(out.join(format!("history_seed{seed}.json")).exists());
    }
    assert_eq!(summary.hv.median, median(&hv).unwrap());
    assert_eq!(summary.igd.median, median(&igd).unwrap());
}

#[test]
fn rerun_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), TINY);
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    assert!(smoo(&["run", "--config", &cfg, "--out", out, "--seeds", "1"]).status.success());
    let o = smoo(&["run", "--config", &cfg, "--out", out, "--seeds", "1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));
    assert!(smoo(&["run", "--config", &cfg, "--out", out, "--seeds", "1", "--force"]).status.success());
}

#[test]
fn effective_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), TINY);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(smoo(&["run", "--config", &cfg, "--out", a.to_str().unwrap(), "--seeds", "2"]).status.success());
    let echo = a.join("effective_config.json");
    let o = smoo(&["run", "--config", echo.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ta = fs::read(a.join("run_table_seed2.csv")).unwrap();
    let tb = fs::read(b.join("run_table_seed2.csv")).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(fs::read(a.join("archive_seed2.json")).unwrap(), fs::read(b.join("archive_seed2.json")).unwrap());
}

#[test]
fn config_errors_name_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_cfg(tmp.path(), "problem = \"dtlz2\"\nD = 10\nM = 2\nq = 70\nk = 60\n");
    let o = smoo(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("q = 70") && stderr(&o).contains("k = 60"), "{}", stderr(&o));
    let cfg = write_cfg(tmp.path(), "problem = \"dtlz2\"\nD = 10\nM = 2\nbudgett = 5\n");
    let o = smoo(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("budgett"), "{}", stderr(&o));
    assert!(!out.exists(), "nothing is written for an invalid config");
}

#[test]
fn compare_reports_both_metrics_for_every_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), TINY);
    let out = tmp.path().join("cmp");
    let o = smoo(&["compare", "--config", &cfg, "--out", out.to_str().unwrap(), "--seeds", "1,2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(v["alpha"], 0.05);
    let modes = v["modes"].as_array().unwrap();
    assert_eq!(modes.len(), 3);
    for m in modes {
        assert!(m["hv"]["median"].is_f64() && m["igd"]["median"].is_f64());
    }
    let tests = v["tests"].as_array().unwrap();
    assert_eq!(tests.len(), 3);
    for t in tests {
        let p = t["hv"]["p_value"].as_f64().unwrap();
        assert!(p > 0.0 && p <= 1.0);
        assert!(t["igd"]["p_value"].is_f64());
    }
}

#[test]
fn calibrate_emits_fifteen_bins_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), &TINY.replace("budget = 45", "budget = 150"));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        let o = smoo(&["calibrate", "--config", &cfg, "--out", d.to_str().unwrap(), "--seeds", "4"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = fs::read_to_string(a.join("calibration_seed4.json")).unwrap();
    assert_eq!(text, fs::read_to_string(b.join("calibration_seed4.json")).unwrap());
    let r: CalibrationReport = serde_json::from_str(&text).unwrap();
    assert_eq!(r.reliability_before.len(), 15);
    assert_eq!(r.reliability_after.len(), 15);
    assert!(r.nll_after <= r.nll_before);
    let csv = fs::read_to_string(a.join("reliability_seed4.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);
}

#[test]
fn constants_report_is_finite_and_echoes_protocol() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), TINY);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        let o = smoo(&["constants", "--config", &cfg, "--out", d.to_str().unwrap(), "--seeds", "1"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = fs::read_to_string(a.join("constants_seed1.json")).unwrap();
    assert_eq!(text, fs::read_to_string(b.join("constants_seed1.json")).unwrap());
    let r: ConstantsOutput = serde_json::from_str(&text).unwrap();
    for v in [r.l_h, r.h_max, r.rho] {
        assert!(v.is_finite() && v >= 0.0);
    }
    assert_eq!((r.protocol.n, r.protocol.delta, r.protocol.trials), (500, 0.01, 200));
}

#[test]
fn constants_refuse_large_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "problem = \"dtlz2\"\nD = 12\nM = 2\nbudget = 150\n");
    let out = tmp.path().join("out");
    let o = smoo(&["constants", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("D = 12"), "{}", stderr(&o));
}

#[test]
fn missing_output_directory_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), TINY);
    let o = smoo(&["run", "--config", &cfg]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--out"));
}

fn row_strategy() -> impl Strategy<Value = RunRow> {
    (
        0usize..1000,
        0usize..100_000,
        -1e6f64..1e6,
        0f64..1e3,
        0f64..32.0,
        prop::sample::select(vec!["none", "full", "warm"]),
        0usize..500,
        prop::option::of(-1e3f64..1e3),
        0f64..1e5,
    )
        .prop_map(|(iteration, evals, hv, igd, mean_s_used, refit, epochs, acq_loss, seconds)| RunRow {
            iteration,
            evals,
            hv,
            igd,
            mean_s_used,
            refit: refit.to_string(),
            epochs,
            acq_loss,
            seconds,
        })
}

proptest! {
    #[test]
    fn run_tables_round_trip(rows in prop::collection::vec(row_strategy(), 0..20)) {
        let text = run_table_string(&rows).unwrap();
        prop_assert_eq!(parse_run_table(&text).unwrap(), rows);
    }
}
