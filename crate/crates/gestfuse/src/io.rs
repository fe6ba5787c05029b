//! Session directories: one CSV per stream plus `annotations.json`.
//!
//! ```text
//! <root>/<participant>/<session>/
//!     left_acc.csv  left_gyro.csv  left_quat.csv  left_capa.csv
//!     right_acc.csv ...
//!     left_glove_acc.csv     (optional, glove IMU used for syncing)
//!     annotations.json
//!     sync.json              (preprocessed sessions only)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gestfuse_core::sync::{DeviceSync, Preprocessed};
use gestfuse_core::{Annotation, Device, GestureLabel, Hand, ModalityPair, SensorStream, SensorType, Session};
use serde::{Deserialize, Serialize};

use crate::error::{read_json, write_file, write_json, Error, Result};

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const SYNC_FILE: &str = "sync.json";
/// Sample rate assumed for glove IMU files.
pub const GLOVE_IMU_RATE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub label: u8,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub video_duration: f64,
    #[serde(default)]
    pub video_claps: Vec<f64>,
    pub annotations: Vec<AnnotationEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncFile {
    pub devices: Vec<DeviceSync>,
    pub clap_intervals: Vec<(f64, f64)>,
}

pub fn stream_file_name(pair: ModalityPair) -> String {
    format!("{}_{}.csv", pair.hand.key(), pair.sensor.key())
}

pub fn glove_file_name(pair: ModalityPair) -> String {
    format!("{}_glove_{}.csv", pair.hand.key(), pair.sensor.key())
}

fn header(sensor: SensorType) -> String {
    let mut h = String::from("t");
    for c in sensor.channel_names() {
        h.push(',');
        h.push_str(c);
    }
    h
}

/// CSV text for a stream. Floats use the shortest representation that
/// parses back to the same value, so a load/save cycle is byte-identical.
pub fn stream_csv(stream: &SensorStream) -> String {
    let c = stream.channels();
    let mut s = header(stream.pair.sensor);
    s.push('\n');
    for (i, t) in stream.timestamps().iter().enumerate() {
        let _ = write!(s, "{t}");
        for v in &stream.values()[i * c..(i + 1) * c] {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn read_stream(path: &Path, pair: ModalityPair, device: Device, rate: f64) -> Result<SensorStream> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let expected = pair.channel_count();
    let head = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if head.len() != expected + 1 {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            msg: format!(
                "{} expects {} value columns ({}), header has {}",
                pair.sensor.short_name(),
                expected,
                pair.sensor.channel_names().join(","),
                head.len().saturating_sub(1)
            ),
        });
    }
    let mut ts = Vec::new();
    let mut vals = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != expected + 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected {} fields, found {}", expected + 1, rec.len()),
            });
        }
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("column {} is not a number: `{field}`", k + 1),
            })?;
            if k == 0 {
                ts.push(v);
            } else {
                vals.push(v);
            }
        }
    }
    SensorStream::with_device(pair, device, rate, ts, vals).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("expected {expected_len} fields, found {len}"),
        },
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

/// Loads one session directory. Missing stream files are absent modalities.
pub fn load_session(dir: &Path) -> Result<Session> {
    let ann_path = dir.join(ANNOTATIONS_FILE);
    let ann: AnnotationFile = read_json(&ann_path)?;
    let name = |p: Option<&Path>| {
        p.and_then(|p| p.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let session_id = ann.session_id.clone().unwrap_or_else(|| name(Some(dir)));
    let participant_id = ann.participant_id.clone().unwrap_or_else(|| name(dir.parent()));

    let mut streams = BTreeMap::new();
    let mut glove_imu = BTreeMap::new();
    for pair in ModalityPair::ALL {
        let p = dir.join(stream_file_name(pair));
        if p.exists() {
            streams.insert(pair, read_stream(&p, pair, pair.sensor.device(), pair.nominal_rate())?);
        }
    }
    for hand in Hand::ALL {
        for sensor in [SensorType::Acc, SensorType::Gyro] {
            let pair = ModalityPair::new(hand, sensor);
            let p = dir.join(glove_file_name(pair));
            if p.exists() {
                glove_imu.insert(pair, read_stream(&p, pair, Device::Glove, GLOVE_IMU_RATE)?);
            }
        }
    }
    let mut annotations = Vec::with_capacity(ann.annotations.len());
    for a in &ann.annotations {
        let label = GestureLabel::from_id(a.label).ok_or_else(|| Error::Schema {
            path: ann_path.clone(),
            msg: format!("label id {} outside 0..=20", a.label),
        })?;
        annotations.push(Annotation {
            label,
            start: a.start,
            end: a.end,
        });
    }
    let session = Session {
        participant_id,
        session_id,
        streams,
        glove_imu,
        annotations,
        video_duration: ann.video_duration,
        video_claps: ann.video_claps,
    };
    session.validate().map_err(|e| Error::Data {
        path: dir.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok(session)
}

pub fn session_dir(root: &Path, session: &Session) -> PathBuf {
    root.join(&session.participant_id).join(&session.session_id)
}

/// Writes `session` under `root/<participant>/<session>` and returns that path.
pub fn save_session(root: &Path, session: &Session) -> Result<PathBuf> {
    let dir = session_dir(root, session);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (pair, s) in &session.streams {
        write_file(&dir.join(stream_file_name(*pair)), stream_csv(s).as_bytes())?;
    }
    for (pair, s) in &session.glove_imu {
        write_file(&dir.join(glove_file_name(*pair)), stream_csv(s).as_bytes())?;
    }
    let ann = AnnotationFile {
        participant_id: Some(session.participant_id.clone()),
        session_id: Some(session.session_id.clone()),
        video_duration: session.video_duration,
        video_claps: session.video_claps.clone(),
        annotations: session
            .annotations
            .iter()
            .map(|a| AnnotationEntry {
                label: a.label.id(),
                start: a.start,
                end: a.end,
            })
            .collect(),
    };
    write_json(&dir.join(ANNOTATIONS_FILE), &ann)?;
    Ok(dir)
}

/// Session directories under `root` (`root/*/*` holding `annotations.json`), sorted.
pub fn session_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let read = |d: &Path| -> Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> = fs::read_dir(d)
            .map_err(|e| Error::io(d, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        v.sort();
        Ok(v)
    };
    for p in read(root)? {
        for s in read(&p)? {
            if s.join(ANNOTATIONS_FILE).exists() {
                out.push(s);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Data {
            path: root.to_path_buf(),
            msg: "no session directories found".into(),
        });
    }
    Ok(out)
}

pub fn load_dataset(root: &Path) -> Result<Vec<Session>> {
    session_dirs(root)?.iter().map(|d| load_session(d)).collect()
}

pub fn save_preprocessed(root: &Path, pre: &Preprocessed) -> Result<PathBuf> {
    let dir = save_session(root, &pre.session)?;
    write_json(
        &dir.join(SYNC_FILE),
        &SyncFile {
            devices: pre.devices.clone(),
            clap_intervals: pre.clap_intervals.clone(),
        },
    )?;
    Ok(dir)
}

pub fn load_preprocessed(dir: &Path) -> Result<Preprocessed> {
    let session = load_session(dir)?;
    let sync: SyncFile = read_json(&dir.join(SYNC_FILE))?;
    Ok(Preprocessed {
        session,
        devices: sync.devices,
        clap_intervals: sync.clap_intervals,
    })
}

pub fn load_preprocessed_dataset(root: &Path) -> Result<Vec<Preprocessed>> {
    session_dirs(root)?.iter().map(|d| load_preprocessed(d)).collect()
}
