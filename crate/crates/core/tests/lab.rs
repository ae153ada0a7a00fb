use std::fs;
use std::path::PathBuf;

use spiral_core::lab::{self, ExperimentConfig, FailureReason, Fixture, RunReport, SCAN_HEADER};

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&config_path(name)).unwrap()
}

#[test]
fn shipped_configs_validate() {
    for name in ["heisenberg_power.toml", "engel_logpower.toml"] {
        let cfg = load(name);
        let (model, spiral) = cfg.validate().unwrap();
        assert!(model.validate().is_ok());
        assert!(spiral.phase().check_asymptotics(100).holds());
    }
}

#[test]
fn early_stop_matches_full_scan() {
    let mut cfg = load("engel_logpower.toml");
    let first = lab::run_pipeline(&cfg).unwrap();
    cfg.scan.full_scan = true;
    let full = lab::run_pipeline(&cfg).unwrap();
    assert_eq!(first.summary.k_star, full.summary.k_star);
    assert_eq!(full.records.len(), (cfg.scan.k_max - cfg.scan.k_min + 1) as usize);
    let k = first.summary.k_star.unwrap();
    assert_eq!(first.records.last().unwrap().k, k);
    assert_eq!(first.record(k).unwrap().epsilon, full.record(k).unwrap().epsilon);
}

#[test]
fn early_cuts_fail_with_a_typed_reason() {
    let mut cfg = load("engel_logpower.toml");
    cfg.scan.full_scan = true;
    let report = lab::run_pipeline(&cfg).unwrap();
    let h3 = report.selection.as_ref().unwrap().h3();
    for rec in report.records.iter().filter(|r| r.k <= h3) {
        assert!(
            matches!(rec.failure, Some(FailureReason::CutInsideDevices { .. })),
            "{rec:?}"
        );
    }
    for rec in report.records.iter().filter(|r| r.certified) {
        assert!(rec.delta_l.unwrap() > 0.0);
        assert!(rec.endpoint_err.unwrap() <= cfg.scan.endpoint_tol);
    }
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let mut cfg = load("engel_logpower.toml");
    cfg.output.timings = false;
    cfg.scan.full_scan = true;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let report = lab::run_pipeline(&cfg).unwrap();
        lab::emit_outputs(&report, &cfg, d.path()).unwrap();
    }
    for name in [
        "summary.json",
        "scan.csv",
        "curves.csv",
        "intervals.csv",
        "fixture.json",
    ] {
        let a = fs::read(dirs[0].path().join(name)).unwrap();
        let b = fs::read(dirs[1].path().join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs between runs");
    }
}

#[test]
fn emitted_files_parse_back() {
    let cfg = load("heisenberg_power.toml");
    let dir = tempfile::tempdir().unwrap();
    let report = lab::run_pipeline(&cfg).unwrap();
    let written = lab::emit_outputs(&report, &cfg, dir.path()).unwrap();
    assert_eq!(written.len(), 5);

    let summary: RunReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.summary.k_star, report.summary.k_star);
    let fx: Fixture = serde_json::from_str(&fs::read_to_string(dir.path().join("fixture.json")).unwrap()).unwrap();
    assert_eq!(Some(fx.k_star), report.summary.k_star);

    let scan = fs::read_to_string(dir.path().join("scan.csv")).unwrap();
    let mut lines = scan.lines();
    assert_eq!(lines.next(), Some(SCAN_HEADER));
    assert_eq!(lines.count(), report.records.len());

    let curves = fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    // spiral samples satisfy |κ(t)| = t
    for line in curves.lines().skip(1).filter(|l| l.starts_with("spiral,")) {
        let f: Vec<f64> = line.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
        assert!((f[1].hypot(f[2]) - f[0]).abs() <= 1e-9 * f[0]);
    }
    assert!(curves.lines().any(|l| l.starts_with("modified,cut,")));
    let intervals = fs::read_to_string(dir.path().join("intervals.csv")).unwrap();
    assert!(intervals.lines().any(|l| l.starts_with("device_3,")));
}

#[test]
fn dump_curves_solves_a_single_cut() {
    let cfg = load("engel_logpower.toml");
    let (rec, curves, intervals) = lab::dump_curves(&cfg, 12).unwrap();
    assert_eq!(rec.k, 12);
    assert!(rec.certified);
    assert!(curves.starts_with("curve,label,t,x1,x2\n"));
    assert!(intervals.starts_with("label,t_lo,t_hi\n"));
    assert!(lab::dump_curves(&cfg, 2).is_err());
}

#[test]
fn bad_configs_are_rejected() {
    assert!(ExperimentConfig::from_toml_str("name = 3").is_err());
    let good = fs::read_to_string(config_path("heisenberg_power.toml")).unwrap();
    let cfg = ExperimentConfig::from_toml_str(&good.replace("a = 0.5", "a = 1.5")).unwrap();
    assert!(cfg.validate().is_err());
    assert!(ExperimentConfig::load(&config_path("missing.toml")).is_err());
}

#[test]
fn selftest_passes_for_several_seeds() {
    for seed in [1, 7, 42] {
        let rep = lab::calculus_selftest(seed).unwrap();
        assert!(rep.passed(), "{rep:?}");
        for b in &rep.sandwich {
            assert!(0.0 < b.lower && b.lower <= b.upper);
        }
    }
}
