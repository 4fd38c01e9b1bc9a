use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_labelwright");

fn cli(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn synth(dir: &Path) -> PathBuf {
    let out = cli(&["synth", "--out", dir.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    dir.join("run.toml")
}

fn stage(name: &str, config: &Path, run_dir: &Path) -> Output {
    cli(&[
        name,
        "-c",
        config.to_str().unwrap(),
        "-r",
        run_dir.to_str().unwrap(),
    ])
}

const COMPARED: &[&str] = &[
    "config.toml",
    "keyphrases.json",
    "discover.json",
    "space.discover.json",
    "space.refine.json",
    "space.json",
    "iterations.jsonl",
    "refine.json",
    "predictions.jsonl",
    "report.json",
];

#[test]
fn stage_commands_match_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(tmp.path());
    let staged = tmp.path().join("staged");
    let whole = tmp.path().join("whole");
    for name in ["discover", "refine", "classify", "evaluate"] {
        let out = stage(name, &config, &staged);
        assert!(
            out.status.success(),
            "{name}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = stage("run", &config, &whole);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("coverage  1.0000"), "{table}");
    for name in COMPARED {
        let a = std::fs::read(staged.join(name)).unwrap();
        let b = std::fs::read(whole.join(name)).unwrap();
        assert!(a == b, "{name} differs between staged and full runs");
    }
}

#[test]
fn refine_iterations_recorded_in_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(tmp.path());
    let run = tmp.path().join("run");
    assert!(stage("discover", &config, &run).status.success());
    let out = cli(&[
        "refine",
        "-c",
        config.to_str().unwrap(),
        "-r",
        run.to_str().unwrap(),
        "--iterations",
        "2",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    let refine = manifest["events"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["stage"] == "refine")
        .unwrap();
    assert_eq!(refine["status"], "ok");
    assert_eq!(refine["iterations"].as_array().unwrap().len(), 2);
    for artifact in refine["artifacts"].as_array().unwrap() {
        assert!(run.join(artifact.as_str().unwrap()).exists(), "{artifact}");
    }
}

#[test]
fn evaluate_without_predictions_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(tmp.path());
    let run = tmp.path().join("run");
    let out = stage("evaluate", &config, &run);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(
        err.contains(run.join("predictions.jsonl").to_str().unwrap()),
        "{err}"
    );
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    std::fs::write(
        &config,
        "corpus = \"c.jsonl\"\nobjective = \"x\"\nchunk_size = 0\n",
    )
    .unwrap();
    let out = stage("discover", &config, &tmp.path().join("run"));
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(&config, "unknown_key = 1\n").unwrap();
    assert_eq!(
        stage("discover", &config, &tmp.path().join("run"))
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn changed_config_refuses_existing_run_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(tmp.path());
    let run = tmp.path().join("run");
    assert!(stage("ingest", &config, &run).status.success());
    let body = std::fs::read_to_string(&config)
        .unwrap()
        .replace("seed = 7", "seed = 8");
    std::fs::write(&config, body).unwrap();
    assert_eq!(stage("ingest", &config, &run).status.code(), Some(2));
}

#[test]
fn unreachable_backend_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(tmp.path());
    let body = std::fs::read_to_string(&config).unwrap().replace(
        "[backends.generation]\nkind = \"mock\"\nconfig = \"mock-extraction.json\"",
        "[backends.generation]\nkind = \"http\"\nbase_url = \"http://127.0.0.1:9\"\nmodel = \"m\"\nmax_attempts = 1\ntimeout_secs = 2",
    );
    assert!(body.contains("kind = \"http\""));
    std::fs::write(&config, body).unwrap();
    let out = stage("discover", &config, &tmp.path().join("run"));
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn data_errors_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(tmp.path());
    std::fs::write(
        tmp.path().join("corpus.jsonl"),
        "{\"id\": 1, \"text\": \"a\"}\nnot json\n",
    )
    .unwrap();
    let out = stage("ingest", &config, &tmp.path().join("run"));
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn probe_dominance_reports_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let config = synth(tmp.path());
    let out = stage("probe-dominance", &config, &tmp.path().join("run"));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // every synthetic document carries exactly one planted label
    assert_eq!(report["percent_dominant"], 1.0);
}
