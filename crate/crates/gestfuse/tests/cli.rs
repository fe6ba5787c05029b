//! End-to-end runs of the `gestfuse` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gestfuse"));
    c.env_remove("MF_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().arg("--quiet").args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset: 2 participants x 2 sessions, one repetition per gesture.
struct Fixture {
    _root: tempfile::TempDir,
    config: PathBuf,
    raw: PathBuf,
    pre: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let root = tempfile::tempdir().unwrap();
        let config = root.path().join("config.json");
        let cfg = json!({
            "seed": 3,
            "synth": {"num_participants": 2, "sessions_per_participant": 2, "repetitions": 1},
            "model": {"feature_dim": 4, "stride": 4},
            "train": {"max_epochs": 3, "patience": 2, "batch_size": 16, "lr": 1e-3}
        });
        fs::write(&config, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
        let raw = root.path().join("raw");
        let pre = root.path().join("pre");
        ok(&["synth", "--config", s(&config), "--out", s(&raw), "--skew"]);
        ok(&["preprocess", "--config", s(&config), "--in", s(&raw), "--out", s(&pre)]);
        Fixture {
            config,
            raw,
            pre,
            _root: root,
        }
    })
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_with_2() {
    let f = fixture();
    assert_eq!(code(&run(&[])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["train", "--out", "/tmp/x"])), 2);
    assert_eq!(code(&run(&["train", "--in", s(&f.pre), "--out", "/tmp/x", "--fusion", "median"])), 2);
    assert_eq!(code(&run(&["preprocess", "--in", "/nonexistent/dir", "--out", "/tmp/x"])), 2);
    assert_eq!(code(&run(&["explain", "--checkpoint", "/nonexistent.ckpt", "--window", "P01/S1@0", "--in", s(&f.pre), "--out", "/tmp"])), 2);
    assert_eq!(code(&run(&["ablate", "--in", s(&f.pre), "--out", "/tmp/x", "--subsets", "CAP+NOSE"])), 2);
    let out = tempfile::tempdir().unwrap();
    let o = bin()
        .env("MF_THREADS", "zero")
        .args(["--quiet", "train", "--config", s(&f.config), "--in", s(&f.pre), "--out", s(out.path())])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert_eq!(code(&run(&["train", "--config", s(&f.config), "--in", s(&f.pre), "--out", s(out.path()), "--fold", "99"])), 2);
}

#[test]
fn help_and_version_exit_with_0() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["train", "--help"])), 0);
}

#[test]
fn runtime_errors_exit_with_1() {
    let empty = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["preprocess", "--in", s(empty.path()), "--out", s(&empty.path().join("o"))])), 1);

    let broken = tempfile::tempdir().unwrap();
    let dir = broken.path().join("P01").join("S1");
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("annotations.json"), "{\"video_duration\": 10}").unwrap();
    let o = run(&["preprocess", "--in", s(broken.path()), "--out", s(&broken.path().join("o"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("annotations.json"));
}

#[test]
fn synth_is_deterministic() {
    let f = fixture();
    let again = tempfile::tempdir().unwrap();
    ok(&["synth", "--config", s(&f.config), "--out", s(again.path()), "--skew"]);
    for rel in ["P01/S1/annotations.json", "P01/S1/left_acc.csv", "P02/S2/right_capa.csv", "P02/S1/left_glove_acc.csv"] {
        assert_eq!(fs::read(f.raw.join(rel)).unwrap(), fs::read(again.path().join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn preprocess_writes_sync_and_windows() {
    let f = fixture();
    let sync = read_json(&f.pre.join("P01/S2/sync.json"));
    assert_eq!(sync["devices"].as_array().unwrap().len(), 4);
    assert_eq!(sync["clap_intervals"].as_array().unwrap().len(), 2);
    let index = read_json(&f.pre.join("windows/windows.json"));
    assert!(!index["records"].as_array().unwrap().is_empty());
    assert!(f.pre.join("windows/windows.bin").is_file());
    assert!(f.pre.join("log.jsonl").is_file());
}

#[test]
fn train_eval_explain_pipeline() {
    let f = fixture();
    let run_dir = tempfile::tempdir().unwrap();
    let out = run_dir.path();
    ok(&["train", "--config", s(&f.config), "--in", s(&f.pre), "--out", s(out), "--split", "lopo"]);
    let report = read_json(&out.join("eval_report.json"));
    assert_eq!(report["folds"].as_array().unwrap().len(), 2);
    assert!(out.join("report.txt").is_file());
    for i in 0..2 {
        assert!(out.join(format!("fold{i}/model.ckpt")).is_file());
    }
    let log = fs::read_to_string(out.join("log.jsonl")).unwrap();
    assert!(log.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
    assert!(log.contains("\"epoch\""));

    let eval_dir = tempfile::tempdir().unwrap();
    ok(&["eval", "--run", s(out), "--out", s(eval_dir.path())]);
    let again = read_json(&eval_dir.path().join("eval_report.json"));
    assert_eq!(again["f1"], report["f1"]);

    // Any training window of the test participant of fold 0.
    let index = read_json(&f.pre.join("windows/windows.json"));
    let rec = &index["records"][0];
    let id = format!(
        "{}/{}@{:.3}",
        rec["participant_id"].as_str().unwrap(),
        rec["session_id"].as_str().unwrap(),
        rec["start"].as_f64().unwrap()
    );
    let ckpt = out.join("fold0/model.ckpt");
    let explain_dir = tempfile::tempdir().unwrap();
    for format in ["json", "svg"] {
        let o = ok(&["explain", "--checkpoint", s(&ckpt), "--window", &id, "--in", s(&f.pre), "--out", s(explain_dir.path()), "--format", format]);
        let path = PathBuf::from(String::from_utf8(o.stdout).unwrap().trim());
        assert!(path.is_file(), "{path:?}");
        if format == "json" {
            let v = read_json(&path);
            assert!(v["decomposition_error"].as_f64().unwrap() <= 1e-6);
            assert_eq!(v["contributions"]["contributions"].as_array().unwrap().len(), 8);
        } else {
            assert!(fs::read_to_string(&path).unwrap().starts_with("<svg"));
        }
    }
    let bad = run(&["explain", "--checkpoint", s(&ckpt), "--window", "nonsense", "--in", s(&f.pre), "--out", s(explain_dir.path())]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn self_attention_explain_exports_heatmap() {
    let f = fixture();
    let run_dir = tempfile::tempdir().unwrap();
    let out = run_dir.path();
    ok(&["train", "--config", s(&f.config), "--in", s(&f.pre), "--out", s(out), "--fusion", "sa", "--fold", "0", "--epochs", "1"]);
    assert!(!out.join("eval_report.json").exists(), "partial runs do not aggregate");
    let index = read_json(&f.pre.join("windows/windows.json"));
    let rec = &index["records"][0];
    let id = format!("{}/{}@{}", rec["participant_id"].as_str().unwrap(), rec["session_id"].as_str().unwrap(), rec["start"]);
    let o = ok(&["explain", "--checkpoint", s(&out.join("fold0/model.ckpt")), "--window", &id, "--in", s(&f.pre), "--out", s(out)]);
    let v = read_json(Path::new(String::from_utf8(o.stdout).unwrap().trim()));
    assert!(v["max_row_sum_error"].as_f64().unwrap() <= 1e-9);
    assert_eq!(v["attention"]["matrix"].as_array().unwrap().len(), 8);
}

#[test]
fn halted_and_resumed_training_matches_uninterrupted() {
    let f = fixture();
    let straight = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    let base = ["train", "--config", s(&f.config), "--in", s(&f.pre), "--fold", "1"];
    let with = |out: &Path, extra: &[&str]| {
        let mut a: Vec<&str> = base.to_vec();
        a.extend_from_slice(&["--out", s(out)]);
        a.extend_from_slice(extra);
        ok(&a);
    };
    with(straight.path(), &[]);
    with(split.path(), &["--halt-after", "1"]);
    assert!(split.path().join("fold1/trainer.ckpt").is_file());
    assert!(!split.path().join("fold1/model.ckpt").exists());
    with(split.path(), &["--resume"]);
    assert_eq!(
        fs::read(straight.path().join("fold1/model.ckpt")).unwrap(),
        fs::read(split.path().join("fold1/model.ckpt")).unwrap()
    );
    assert_eq!(
        read_json(&straight.path().join("fold1/fold_report.json")),
        read_json(&split.path().join("fold1/fold_report.json"))
    );

    // Resuming with a different configuration is refused.
    let o = run(&[base.as_slice(), &["--out", s(split.path()), "--resume", "--lr", "0.5"]].concat());
    assert_eq!(code(&o), 2);
}

#[test]
fn training_is_independent_of_thread_count() {
    let f = fixture();
    let mut reports = Vec::new();
    for threads in ["1", "3"] {
        let out = tempfile::tempdir().unwrap();
        let o = bin()
            .env("MF_THREADS", threads)
            .args(["--quiet", "train", "--config", s(&f.config), "--in", s(&f.pre), "--out", s(out.path()), "--split", "lopo", "--epochs", "2"])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        reports.push(fs::read(out.path().join("eval_report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn ablation_over_custom_subsets() {
    let f = fixture();
    let out = tempfile::tempdir().unwrap();
    let o = ok(&["ablate", "--config", s(&f.config), "--in", s(&f.pre), "--out", s(out.path()), "--subsets", "CAP,ACC+GYRO", "--split", "lopo", "--epochs", "1"]);
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("CAP") && table.contains("ACC+GYRO"), "{table}");
    let v = read_json(&out.path().join("ablation.json"));
    assert_eq!(v["table"]["rows"].as_array().unwrap().len(), 2);
    assert!(out.path().join("ablation.svg").is_file());
}

#[test]
fn gradcheck_reports_json() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["gradcheck", "--feature-dim", "2", "--batch", "2", "--out", s(out.path())]);
    assert!(matches!(code(&o), 0 | 1));
    let v = read_json(&out.path().join("gradcheck.json"));
    assert!(v["report"]["checked"].as_u64().unwrap() > 1000);
    assert!(String::from_utf8_lossy(&o.stdout).contains("max relative error"));
}
