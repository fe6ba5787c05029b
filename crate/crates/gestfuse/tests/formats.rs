//! On-disk formats: session CSV/JSON, window store and checkpoints.

use std::fs;

use gestfuse::checkpoint;
use gestfuse::io;
use gestfuse::pipeline::random_windows;
use gestfuse::windows;
use gestfuse::Error;
use gestfuse_core::model::{FusionModel, ModelConfig};
use gestfuse_core::synth::{generate_session, SynthConfig};
use gestfuse_core::sync::{preprocess_session, PreprocessConfig};
use gestfuse_core::train::{TrainConfig, Trainer};
use gestfuse_core::window::{training_windows, WindowingConfig};
use gestfuse_core::{FusionKind, LabeledWindow};
use serde_json::json;

fn tiny_synth() -> SynthConfig {
    SynthConfig {
        num_participants: 1,
        sessions_per_participant: 1,
        repetitions: 1,
        ..SynthConfig::default()
    }
}

fn small_model(fusion: FusionKind) -> ModelConfig {
    ModelConfig {
        feature_dim: 4,
        window_seconds: 0.3,
        kernel_size: 3,
        ..ModelConfig::default()
    }
    .with_fusion(fusion)
}

#[test]
fn session_round_trip_is_lossless_and_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let session = generate_session(&tiny_synth(), 0, 0).unwrap();
    let path = io::save_session(dir.path(), &session).unwrap();
    let loaded = io::load_session(&path).unwrap();
    assert_eq!(loaded, session);

    let again = tempfile::tempdir().unwrap();
    let path2 = io::save_session(again.path(), &loaded).unwrap();
    for entry in fs::read_dir(&path).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(path.join(&name)).unwrap(), fs::read(path2.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn preprocessed_round_trip_keeps_sync_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let pre = preprocess_session(&generate_session(&tiny_synth(), 0, 0).unwrap(), &PreprocessConfig::default()).unwrap();
    let path = io::save_preprocessed(dir.path(), &pre).unwrap();
    let back = io::load_preprocessed(&path).unwrap();
    assert_eq!(back.devices, pre.devices);
    assert_eq!(back.clap_intervals, pre.clap_intervals);
    assert_eq!(back.session, pre.session);
    assert_eq!(io::load_preprocessed_dataset(dir.path()).unwrap().len(), 1);
}

fn saved_session() -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = io::save_session(dir.path(), &generate_session(&tiny_synth(), 0, 0).unwrap()).unwrap();
    (dir, path)
}

#[test]
fn malformed_csv_reports_the_line() {
    let (_d, path) = saved_session();
    let f = path.join("left_acc.csv");
    let mut text = fs::read_to_string(&f).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut edited: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
    edited[4] = "0.04,1.0,abc,2.0".into();
    text = edited.join("\n");
    fs::write(&f, text).unwrap();
    match io::load_session(&path) {
        Err(Error::Parse { line, msg, .. }) => {
            assert_eq!(line, 5);
            assert!(msg.contains("abc"), "{msg}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn short_row_is_a_parse_error() {
    let (_d, path) = saved_session();
    let f = path.join("right_gyro.csv");
    let mut text = fs::read_to_string(&f).unwrap();
    text.push_str("999.0,1.0\n");
    fs::write(&f, text).unwrap();
    assert!(matches!(io::load_session(&path), Err(Error::Parse { .. })));
}

#[test]
fn wrong_header_is_a_schema_error() {
    let (_d, path) = saved_session();
    let f = path.join("left_acc.csv");
    fs::write(&f, "t,x,y\n0,1,2\n").unwrap();
    let err = io::load_session(&path).unwrap_err();
    assert!(matches!(err, Error::Schema { .. }), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn non_monotone_timestamps_are_rejected() {
    let (_d, path) = saved_session();
    let f = path.join("left_acc.csv");
    fs::write(&f, "t,x,y,z\n0,1,2,3\n0.02,1,2,3\n0.01,1,2,3\n").unwrap();
    assert!(matches!(io::load_session(&path), Err(Error::Data { .. })));
}

#[test]
fn bad_label_and_bad_json_are_reported() {
    let (_d, path) = saved_session();
    let f = path.join(io::ANNOTATIONS_FILE);
    let mut ann: serde_json::Value = serde_json::from_slice(&fs::read(&f).unwrap()).unwrap();
    ann["annotations"][0]["label"] = json!(42);
    fs::write(&f, serde_json::to_vec(&ann).unwrap()).unwrap();
    assert!(matches!(io::load_session(&path), Err(Error::Schema { .. })));
    fs::write(&f, "{").unwrap();
    assert!(matches!(io::load_session(&path), Err(Error::Json { .. })));
}

#[test]
fn missing_stream_is_an_absent_modality() {
    let (_d, path) = saved_session();
    fs::remove_file(path.join("right_capa.csv")).unwrap();
    let s = io::load_session(&path).unwrap();
    assert_eq!(s.streams.len(), 7);
}

#[test]
fn window_store_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = WindowingConfig::default();
    let pre = preprocess_session(&generate_session(&tiny_synth(), 0, 0).unwrap(), &PreprocessConfig::default()).unwrap();
    let ws = training_windows(&pre, &cfg).unwrap();
    assert!(!ws.is_empty());
    windows::save_windows(dir.path(), &ws, &cfg).unwrap();
    let (back, back_cfg) = windows::load_windows(dir.path()).unwrap();
    assert_eq!(back, ws);
    assert_eq!(back_cfg, cfg);
}

#[test]
fn truncated_window_store_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_model(FusionKind::Llr);
    let ws = random_windows(&cfg, 3, 1);
    windows::save_windows(dir.path(), &ws, &WindowingConfig::default()).unwrap();
    let bin = dir.path().join(windows::RECORDS_FILE);
    let bytes = fs::read(&bin).unwrap();
    fs::write(&bin, &bytes[..bytes.len() - 9]).unwrap();
    assert!(windows::load_windows(dir.path()).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    fs::write(&bin, &bad).unwrap();
    assert!(matches!(windows::load_windows(dir.path()), Err(Error::Format { .. })));
}

fn trained_trainer(fusion: FusionKind, ws: &[LabeledWindow]) -> Trainer {
    let refs: Vec<&LabeledWindow> = ws.iter().collect();
    let train = TrainConfig {
        batch_size: 4,
        max_epochs: 5,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(small_model(fusion), train).unwrap();
    t.run_epoch(&refs, &refs).unwrap();
    t
}

#[test]
fn model_checkpoint_reproduces_outputs_bit_for_bit() {
    for fusion in [FusionKind::Llr, FusionKind::SelfAttention] {
        let cfg = small_model(fusion);
        let ws = random_windows(&cfg, 8, 2);
        let refs: Vec<&LabeledWindow> = ws.iter().collect();
        let model = trained_trainer(fusion, &ws).model().clone();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        checkpoint::save_model(&p, &model.to_state(), json!({"note": "x"})).unwrap();
        let (state, meta) = checkpoint::load_model(&p).unwrap();
        assert_eq!(meta["note"], "x");
        assert_eq!(state, model.to_state());
        let copy = FusionModel::from_state(state).unwrap();
        let batch = model.make_batch(&refs).unwrap();
        assert_eq!(model.forward_batch(&batch).unwrap(), copy.forward_batch(&batch).unwrap());
    }
}

#[test]
fn trainer_checkpoint_resumes_identically() {
    let cfg = small_model(FusionKind::Llr);
    let ws = random_windows(&cfg, 8, 5);
    let refs: Vec<&LabeledWindow> = ws.iter().collect();
    let mut a = trained_trainer(FusionKind::Llr, &ws);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.ckpt");
    checkpoint::save_trainer(&p, &a.to_state(), json!({})).unwrap();
    let (state, _) = checkpoint::load_trainer(&p).unwrap();
    assert_eq!(state, a.to_state());
    let mut b = Trainer::from_state(state).unwrap();
    a.run_epoch(&refs, &refs).unwrap();
    b.run_epoch(&refs, &refs).unwrap();
    assert_eq!(a.to_state(), b.to_state());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let cfg = small_model(FusionKind::Llr);
    let model = FusionModel::new(cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    checkpoint::save_model(&p, &model.to_state(), json!(null)).unwrap();
    let bytes = fs::read(&p).unwrap();

    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"NOPE");
    fs::write(&p, &bad).unwrap();
    assert!(matches!(checkpoint::load_model(&p), Err(Error::Format { .. })));

    fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
    assert!(checkpoint::load_model(&p).is_err());

    let mut long = bytes.clone();
    long.push(0);
    fs::write(&p, &long).unwrap();
    assert!(checkpoint::load_model(&p).is_err());

    // A model checkpoint is not a trainer checkpoint.
    fs::write(&p, &bytes).unwrap();
    assert!(checkpoint::load_trainer(&p).is_err());
}

#[test]
fn checkpoint_with_mismatched_shapes_fails_to_build() {
    let model = FusionModel::new(small_model(FusionKind::Llr), 1).unwrap();
    let mut state = model.to_state();
    state.config.feature_dim = 6;
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    checkpoint::save_model(&p, &state, json!(null)).unwrap();
    let (state, _) = checkpoint::load_model(&p).unwrap();
    assert!(FusionModel::from_state(state).is_err());
}
