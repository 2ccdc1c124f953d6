use std::fs;
use std::path::Path;
use std::process::Command;

use dacr_core::harness::config::{Ablation, DataSource, ExperimentConfig, Mode, Stage};
use dacr_core::harness::pipeline::{run_pipeline, run_pipeline_cached, RunOptions, StageCache};
use dacr_core::harness::synthetic::{AnomalyKind, SyntheticSpec};

fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.name = "tiny".into();
    c.data = DataSource::Synthetic(SyntheticSpec { n_per_class: 6, t_len: 16, ..Default::default() });
    c.seeds = vec![0, 1];
    c.vae.iterations = 3;
    c.encoder.iterations = 3;
    c.encoder.batch = 4;
    c.extractor.blocks = 2;
    c.reconstructor.m = 4;
    c.reconstructor.iterations = 3;
    c.reconstructor.batch = 2;
    c.reconstructor.queries_per_instance = 4;
    c
}

fn report_files(dir: &Path) -> (Vec<u8>, Vec<u8>) {
    (fs::read(dir.join("tiny/report.txt")).unwrap(), fs::read(dir.join("tiny/report.tsv")).unwrap())
}

#[test]
fn repeated_runs_write_identical_reports() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&tiny(), &RunOptions::persisted(a.path())).unwrap().unwrap();
    run_pipeline(&tiny(), &RunOptions::persisted(b.path())).unwrap().unwrap();
    assert_eq!(report_files(a.path()), report_files(b.path()));
    assert_eq!(
        fs::read(a.path().join("tiny/stage3/seed-1/scores.tsv")).unwrap(),
        fs::read(b.path().join("tiny/stage3/seed-1/scores.tsv")).unwrap()
    );
}

#[test]
fn resume_from_each_stage_matches_uninterrupted() {
    let fresh = tempfile::tempdir().unwrap();
    run_pipeline(&tiny(), &RunOptions::persisted(fresh.path())).unwrap().unwrap();
    for stop in [Stage::Augment, Stage::Encode] {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions { root: Some(dir.path().to_path_buf()), stop_after: Some(stop) };
        assert!(run_pipeline(&tiny(), &opts).unwrap().is_none());
        assert!(!dir.path().join("tiny/report.txt").exists());
        run_pipeline(&tiny(), &RunOptions::persisted(dir.path())).unwrap().unwrap();
        assert_eq!(report_files(dir.path()), report_files(fresh.path()), "stopped after {stop:?}");
    }
}

#[test]
fn completed_run_reloads_without_retraining() {
    let dir = tempfile::tempdir().unwrap();
    let first = run_pipeline(&tiny(), &RunOptions::persisted(dir.path())).unwrap().unwrap();
    let again = run_pipeline(&tiny(), &RunOptions::persisted(dir.path())).unwrap().unwrap();
    assert_eq!(first.aucs, again.aucs);
    assert_eq!(first.config_hash, again.config_hash);
}

#[test]
fn shared_cache_matches_independent_runs() {
    let mut cache = StageCache::new();
    for ab in [Ablation::None, Ablation::Ab1, Ablation::Ab2] {
        let mut c = tiny();
        c.ablation = ab;
        let cached = run_pipeline_cached(&c, &RunOptions::default(), &mut cache).unwrap().unwrap();
        let alone = run_pipeline(&c, &RunOptions::default()).unwrap().unwrap();
        assert_eq!(cached.aucs, alone.aucs, "{ab}");
    }
}

#[test]
fn iad_run_produces_an_auc() {
    let mut c = tiny();
    c.mode = Mode::Iad;
    c.data = DataSource::SyntheticSeries {
        spec: SyntheticSpec { t_len: 80, n_classes: 1, anomaly_kinds: AnomalyKind::all(), ..Default::default() },
        n_train: 2,
        n_test: 2,
        anomalies_per_test: 2,
    };
    c.window_length = 20;
    c.window_stride = 20;
    c.seeds = vec![0];
    let r = run_pipeline(&c, &RunOptions::default()).unwrap().unwrap();
    assert!((0.0..=1.0).contains(&r.aucs[0]));
}

#[test]
fn cli_synth_split_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bin = env!("CARGO_BIN_EXE_dacr");
    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).current_dir(d).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    run(&["synth", "--out", "c.manifest", "--n-classes", "3", "--n-per-class", "5", "--T", "12", "--F", "2"]);
    let info = run(&["data", "inspect", "c.manifest"]);
    assert!(info.contains("15"), "{info}");
    run(&[
        "data", "split", "--input", "c.manifest", "--mode", "ead", "--normal-classes", "0,1", "--seed", "0",
        "--out-dir", "sp",
    ]);
    assert!(d.join("sp/train.manifest").exists() && d.join("sp/test.manifest").exists());
    let bad = Command::new(bin).args(["data", "inspect", "missing.manifest"]).current_dir(d).output().unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error:"));
}
