use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use moo_ids_core::pipeline::{content_digest, synthetic_fixture};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic_500.csv")
}

const QUICK: &[&str] = &[
    "--set",
    "cv_folds=3",
    "--set",
    "autofs_particles=10",
    "--set",
    "autofs_iterations=10",
    "--set",
    "cash_particles=4",
    "--set",
    "cash_iterations=2",
    "--set",
    "latency=model_cost",
    "--set",
    "space_n_estimators=5,25",
    "--set",
    "space_max_depth=2,4",
];

fn moo_ids(args: &[&str], out: &Path) -> Output {
    // later flags override earlier ones, so per-test arguments go last
    Command::new(env!("CARGO_BIN_EXE_moo-ids"))
        .arg("--out")
        .arg(out)
        .args(["--data", fixture().to_str().unwrap(), "--threads", "2"])
        .args(QUICK)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "status {:?}\nstderr: {}",
        o.status,
        String::from_utf8_lossy(&o.stderr)
    );
}

fn report_digest(out: &Path) -> String {
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report/report.json")).unwrap()).unwrap();
    content_digest(&v).unwrap()
}

#[test]
fn bundled_fixture_matches_generator() {
    let loaded = moo_ids_core::dataset::load_csv(fixture(), "Label").unwrap();
    assert_eq!(loaded, synthetic_fixture(500, 1));
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let o = moo_ids(&["pipeline", "--seed", "1"], dir.path());
    assert_ok(&o);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("| Method |"), "{stdout}");
    for sub in [
        "plans/autodp.json",
        "features/importance.json",
        "features/selection.json",
        "search/cash.json",
        "search/cash_trace.csv",
        "search/autofs_trace.csv",
        "model/model.json",
        "report/report.json",
        "report/report.md",
        "report/calibration.csv",
    ] {
        assert!(dir.path().join(sub).exists(), "{sub} missing");
    }
}

#[test]
fn stages_run_one_by_one_match_the_pipeline() {
    let whole = tempfile::tempdir().unwrap();
    assert_ok(&moo_ids(&["pipeline"], whole.path()));
    let staged = tempfile::tempdir().unwrap();
    for stage in ["preprocess", "score-features", "autofs", "cash", "train", "evaluate"] {
        assert_ok(&moo_ids(&[stage], staged.path()));
    }
    assert_eq!(report_digest(whole.path()), report_digest(staged.path()));
    for f in ["plans/autodp.json", "features/selection.json", "search/cash.json"] {
        assert_eq!(
            std::fs::read(whole.path().join(f)).unwrap(),
            std::fs::read(staged.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn predict_scores_a_csv() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&moo_ids(&["pipeline"], dir.path()));
    let preds = dir.path().join("p.csv");
    let o = moo_ids(
        &[
            "predict",
            "--input",
            fixture().to_str().unwrap(),
            "--output",
            preds.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_ok(&o);
    let stdout = String::from_utf8_lossy(&o.stdout);
    let acc: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("accuracy "))
        .expect("accuracy line")
        .parse()
        .unwrap();
    assert!(acc > 0.9, "{acc}");
    assert_eq!(std::fs::read_to_string(preds).unwrap().lines().count(), 501);
}

#[test]
fn config_file_is_read_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "seed = 9\nlabel_column = nope\n").unwrap();
    // the file's label column does not exist, the flag fixes it
    let o = moo_ids(
        &["preprocess", "--config", cfg.to_str().unwrap(), "--label", "Label"],
        dir.path(),
    );
    assert_ok(&o);
    let plan: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("plans/autodp.json")).unwrap()).unwrap();
    assert_eq!(plan["body"]["seed"], 9);
    let o = moo_ids(&["preprocess", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // usage errors
    assert_eq!(moo_ids(&["no-such-command"], dir.path()).status.code(), Some(2));
    assert_eq!(
        moo_ids(&["preprocess", "--set", "bogus=1"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(
        moo_ids(&["preprocess", "--set", "test_fraction=1.5"], dir.path())
            .status
            .code(),
        Some(2)
    );
    // missing dataset
    let o = moo_ids(&["pipeline", "--data", "/nonexistent.csv"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage preprocess"));
    // a later stage without its inputs
    assert_eq!(moo_ids(&["train"], dir.path()).status.code(), Some(3));
}
