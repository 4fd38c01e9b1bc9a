use std::path::Path;

use labelwright::labelspace::LabelSpace;
use labelwright::pipeline::{EventStatus, Run, RunConfig};
use labelwright::synthetic::{generate, SyntheticSpec};

fn synthetic(dir: &Path) -> RunConfig {
    generate(&SyntheticSpec::default())
        .unwrap()
        .write(dir)
        .unwrap();
    RunConfig::load(&dir.join("run.toml")).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn interrupted_refinement_resumes_to_the_same_result() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synthetic(tmp.path());
    let full = tmp.path().join("full");
    let cut = tmp.path().join("cut");

    let mut a = Run::open(config.clone(), &full).unwrap();
    a.discover().unwrap();
    let uninterrupted = a.refine().unwrap();
    assert!(uninterrupted.iterations.len() > 1);

    // one checkpointed iteration, then a crash before the stage finished
    let mut b = Run::open(config, &cut).unwrap();
    b.discover().unwrap();
    b.refine_with(Some(1)).unwrap();
    let after_first = uninterrupted.iterations[0].version;
    LabelSpace::load(&full.join("space.refine.json"))
        .unwrap()
        .at_version(after_first)
        .unwrap()
        .save(&cut.join("space.refine.partial.json"))
        .unwrap();
    let resumed = b.refine().unwrap();

    assert_eq!(resumed.resumed_from, 1);
    assert_eq!(resumed.labels, uninterrupted.labels);
    assert_eq!(resumed.iterations, uninterrupted.iterations);
    assert_eq!(
        read(&cut, "iterations.jsonl"),
        read(&full, "iterations.jsonl")
    );
    assert_eq!(
        read(&cut, "space.refine.json"),
        read(&full, "space.refine.json")
    );
    assert!(!cut.join("space.refine.partial.json").exists());
}

#[test]
fn failed_stage_is_recorded_in_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synthetic(tmp.path());
    let mut run = Run::open(config, &tmp.path().join("run")).unwrap();
    let err = run.evaluate().unwrap_err();
    assert!(err.to_string().contains("predictions.jsonl"), "{err}");
    let event = run.manifest().events.last().unwrap();
    assert_eq!(event.stage, "evaluate");
    assert_eq!(event.status, EventStatus::Failed);
    assert!(event
        .error
        .as_deref()
        .unwrap()
        .contains("predictions.jsonl"));
}

#[test]
fn evaluation_reports_full_coverage_on_synthetic_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synthetic(tmp.path());
    let mut run = Run::open(config, &tmp.path().join("run")).unwrap();
    let report = run.run_all().unwrap().expect("gold labels present");
    assert_eq!(report.coverage.coverage, 1.0);
    assert!(report.table().contains("1.0000"));
}
