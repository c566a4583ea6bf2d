mod common;

use common::small_config;
use lander_core::config::PipelineConfig;
use lander_core::network::LayeredReluNetwork;
use lander_core::pipeline::{load_network, run_pipeline, ErrorReport, PipelineError};
use lander_core::report::write_regions_csv;
use lander_core::verifier::{AggregateStatus, VerdictStatus};

fn config(dir: &std::path::Path, controller: &str, goal: Option<&str>) -> PipelineConfig {
    PipelineConfig::from_toml_str(&small_config(dir, controller, goal)).unwrap()
}

#[test]
fn constant_controller_is_safe_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_pipeline(&config(dir.path(), "constant = 0.0", None)).unwrap();
    let r = &run.report;
    assert_eq!(r.status, AggregateStatus::Safe);
    assert_eq!(r.exit_code, 0);
    assert_eq!(r.mu_max, Some(1.1));
    assert!(!r.regions.is_empty());
    assert!(r.regions.iter().all(|x| x.verdict.status == VerdictStatus::Proved));
    let mc = r.monte_carlo.as_ref().unwrap();
    assert_eq!(mc.trajectories, 100);
    for f in ["report.json", "summary.txt", "regions.csv", "mu_search.csv", "timings.json"] {
        assert!(dir.path().join("out").join(f).is_file(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("out/regions.csv")).unwrap();
    assert!(csv.starts_with("region_id,center,verdict,splits,millis\n"));
    assert_eq!(csv.lines().count(), r.regions.len() + 1);
}

#[test]
fn region_timings_add_up_to_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_pipeline(&config(dir.path(), "constant = 0.05", None)).unwrap();
    let t = &run.timings;
    assert!(t.regions.iter().all(|(_, ms)| *ms >= 0.0));
    assert!(t.stages.iter().all(|s| s.millis >= 0.0));
    let sum: f64 = t.regions.iter().map(|(_, ms)| ms).sum();
    let stage = t.stage("verification").unwrap();
    assert!((sum - stage).abs() <= 0.1 * stage + 0.5, "sum {sum} vs stage {stage}");
}

#[test]
fn reports_are_identical_across_runs() {
    let read = |d: &tempfile::TempDir| {
        let cfg = config(d.path(), "constant = 0.02", None);
        run_pipeline(&cfg).unwrap();
        let text = std::fs::read_to_string(d.path().join("out/report.json")).unwrap();
        // The output directory is part of the embedded config.
        text.replace(&d.path().display().to_string(), "<dir>")
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(read(&a), read(&b));
}

#[test]
fn unsatisfiable_spec_gives_no_feasible_mu() {
    let dir = tempfile::tempdir().unwrap();
    // The unsafe box covers the initial set.
    let goal = "{ center = [1.2073, 0.0, 1600.0], half_widths = [0.05, 10.0, 100.0] }";
    let cfg = config(dir.path(), "constant = 0.0", Some(goal));
    let run = run_pipeline(&cfg).unwrap();
    assert!(!run.report.abstraction.goal_cells.is_empty());
    assert_eq!(run.report.status, AggregateStatus::NoFeasibleMu);
    assert_eq!(run.report.exit_code, 4);
    assert!(run.report.regions.is_empty());
    let csv = std::fs::read_to_string(dir.path().join("out/regions.csv")).unwrap();
    assert_eq!(csv, "region_id,center,verdict,splits,millis\n");
}

#[test]
fn empty_region_list_writes_only_the_header() {
    let mut buf = Vec::new();
    write_regions_csv(&mut buf, &[]).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "region_id,center,verdict,splits,millis\n");
}

#[test]
fn corrupted_weights_are_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ctrl.json");
    let net = lander_core::pipeline::constant_controller(64, 0.0);
    let text = net.to_weights_string();
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    let err = load_network(&path).unwrap_err();
    assert_eq!(err.kind(), "parse");
    assert_eq!(ErrorReport::of(&err).exit_code, 1);

    let cfg = config(dir.path(), &format!("weights = {:?}", path.display().to_string()), None);
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::Network(_)), "{err}");
    assert_eq!(err.kind(), "parse");
    assert!(LayeredReluNetwork::from_weights_str("{}").is_err());
}

#[test]
fn cached_weights_run_like_inline_constants() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ctrl.json");
    lander_core::pipeline::constant_controller(64, 0.0).save_weights(&path).unwrap();
    let cfg = config(dir.path(), &format!("weights = {:?}", path.display().to_string()), None);
    let run = run_pipeline(&cfg).unwrap();
    assert_eq!(run.report.status, AggregateStatus::Safe);
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let base = small_config(dir.path(), "constant = 0.0", None);
    let bad = [
        base.replace("schema_version = 1", "schema_version = 9"),
        base.replace("seed = 11", "seed = 11\nbogus = 1"),
        base.replace("mu_values = [0.1, 0.3, 1.1]", "mu_values = [0.3, 0.1]"),
        base.replace("constant = 0.0", ""),
        base.replace("initial_upper = [4.0, 8.0, 4.0]", "initial_upper = [4.0, 9.0, 4.0]"),
        base.replace("kind = \"invariant\"", "kind = \"reach\""),
    ];
    for text in bad {
        let res = PipelineConfig::from_toml_str(&text).and_then(|c| c.validate().map(|_| c));
        assert!(res.is_err(), "accepted:\n{text}");
    }
    let cfg = PipelineConfig::from_toml_str(&base).unwrap();
    assert_eq!(PipelineConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
}
