use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mixopt::campaign::Store;
use serde_json::Value;

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn golden(name: &str) -> PathBuf {
    manifest().join("tests/golden").join(name)
}

fn config(name: &str) -> PathBuf {
    manifest().join("../../configs").join(name)
}

fn mixopt(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixopt"))
        .arg("--store")
        .arg(store)
        .args(args)
        .env_remove("MIXOPT_CAMPAIGN")
        .env_remove("MIXOPT_STORE")
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Compares against a golden file; `MIXOPT_UPDATE_GOLDEN=1` rewrites it.
fn check_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("MIXOPT_UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "output differs from {}", path.display());
}

fn init(store: &Path, id: &str) {
    let cfg = config("example-campaign.json");
    ok(mixopt(
        store,
        &["-c", id, "init", "--config", cfg.to_str().unwrap(), "--format", "csv"],
    ));
}

#[test]
fn ingest_psi_golden() {
    let dir = tempfile::tempdir().unwrap();
    init(dir.path(), "g");
    let file = golden("psi-measurements.csv");
    let csv = ok(mixopt(
        dir.path(),
        &["-c", "g", "--format", "csv", "ingest", file.to_str().unwrap()],
    ));
    check_golden("psi-measurements.out.csv", &csv);
    let first = csv.lines().nth(1).unwrap();
    assert!(first.contains(",41.2238,"), "{first}");

    let dir = tempfile::tempdir().unwrap();
    init(dir.path(), "g");
    let json = ok(mixopt(dir.path(), &["-c", "g", "ingest", file.to_str().unwrap()]));
    check_golden("psi-measurements.out.json", &json);
    let v: Value = serde_json::from_str(&json).unwrap();
    let mpa = v["observations"][0]["strength_mpa"].as_f64().unwrap();
    assert_eq!((mpa * 100.0).round() / 100.0, 41.22);
    assert_eq!(v["report"]["accepted"], 5);
}

#[test]
fn example_measurements_golden() {
    let dir = tempfile::tempdir().unwrap();
    init(dir.path(), "ex");
    let file = config("example-measurements.csv");
    let csv = ok(mixopt(
        dir.path(),
        &["-c", "ex", "--format", "csv", "ingest", file.to_str().unwrap()],
    ));
    check_golden("example-measurements.out.csv", &csv);
    let pareto = ok(mixopt(
        dir.path(),
        &["-c", "ex", "--format", "csv", "pareto", "--age", "28"],
    ));
    check_golden("example-pareto-28.csv", &pareto);
    let state = ok(mixopt(dir.path(), &["-c", "ex", "--format", "csv", "state"]));
    check_golden("example-state.csv", &state);
}

#[test]
fn strict_ingest_fails_without_appending() {
    let dir = tempfile::tempdir().unwrap();
    init(dir.path(), "s");
    let file = golden("bad-row.csv");
    let out = mixopt(dir.path(), &["-c", "s", "ingest", "--strict", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 3"), "{err}");
    let state: Value = serde_json::from_str(&ok(mixopt(dir.path(), &["-c", "s", "state"]))).unwrap();
    assert_eq!(state["observations"], 0);
    // lenient mode keeps the good row
    let v: Value =
        serde_json::from_str(&ok(mixopt(dir.path(), &["-c", "s", "ingest", file.to_str().unwrap()]))).unwrap();
    assert_eq!(v["report"]["accepted"], 1);
    assert_eq!(v["report"]["rejected"], 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mixopt(dir.path(), &["-c", "missing", "state"]).status.code(), Some(6));
    init(dir.path(), "e");
    assert_eq!(
        mixopt(dir.path(), &["-c", "e", "propose", "--q", "2"]).status.code(),
        Some(4)
    );
    assert_eq!(mixopt(dir.path(), &["-c", "e", "infer"]).status.code(), Some(4));
    assert_eq!(mixopt(dir.path(), &["state"]).status.code(), Some(3));
    let cfg = config("example-campaign.json");
    assert_eq!(
        mixopt(dir.path(), &["-c", "e", "init", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn full_session_persists_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    init(dir.path(), "run");
    let file = config("example-measurements.csv");
    ok(mixopt(dir.path(), &["-c", "run", "ingest", file.to_str().unwrap()]));
    let fit: Value = serde_json::from_str(&ok(mixopt(dir.path(), &["-c", "run", "fit"]))).unwrap();
    let digest = fit["snapshot"]["digest"].as_str().unwrap().to_string();
    let batch: Value = serde_json::from_str(&ok(mixopt(
        dir.path(),
        &["-c", "run", "propose", "--q", "2", "--seed", "3"],
    )))
    .unwrap();
    assert_eq!(batch["id"], "ai-1");
    assert_eq!(batch["mixtures"].as_array().unwrap().len(), 2);

    let scenario = config("scenario-no-fly-ash.json");
    let inferred: Value = serde_json::from_str(&ok(mixopt(
        dir.path(),
        &[
            "-c",
            "run",
            "infer",
            "--scenario",
            scenario.to_str().unwrap(),
            "--candidates",
            "2000",
        ],
    )))
    .unwrap();
    assert!(inferred["points"]
        .as_array()
        .unwrap()
        .iter()
        .all(|p| p["mixture"]["fly_ash"].as_f64().unwrap_or(0.0) == 0.0));

    let predict: Value = serde_json::from_str(&ok(mixopt(
        dir.path(),
        &[
            "-c",
            "run",
            "predict",
            "--mixture",
            r#"{"cement": 380, "water": 175, "fine_aggregate": 800, "coarse_aggregate": 1000}"#,
            "--ages",
            "0,28",
        ],
    )))
    .unwrap();
    assert_eq!(predict.as_array().unwrap().len(), 2);

    // the on-disk campaign reloads to the state the CLI reports
    let store = Store::open(dir.path()).unwrap();
    let campaign = store.load("run").unwrap();
    assert!(campaign.snapshots.iter().any(|s| s.digest == digest));
    let state: Value = serde_json::from_str(&ok(mixopt(dir.path(), &["-c", "run", "state"]))).unwrap();
    assert_eq!(state, serde_json::to_value(campaign.summary().unwrap()).unwrap());
    assert_eq!(campaign.observations.len(), 64);
    store.save(&campaign).unwrap();
    assert_eq!(store.load("run").unwrap(), campaign);
}
