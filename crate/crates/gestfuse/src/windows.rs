//! Window record files.
//!
//! `windows.bin` (little endian):
//!
//! ```text
//! magic b"GFWN", version u32, count u64
//! per record:
//!     len u64           bytes that follow in this record
//!     label u8          gesture id
//!     pairs u8
//!     per pair: index u8 (position in ModalityPair::ALL), rows u32, cols u32
//!     per pair, same order: rows * cols f64, row-major
//! ```
//!
//! `windows.json` lists the source of every record plus the windowing config.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use gestfuse_core::nn::Tensor;
use gestfuse_core::window::WindowingConfig;
use gestfuse_core::{GestureLabel, LabeledWindow, ModalityPair, WindowSource};
use serde::{Deserialize, Serialize};

use crate::error::{read_json, write_file, write_json, Error, Result};

pub const MAGIC: &[u8; 4] = b"GFWN";
pub const VERSION: u32 = 1;
pub const RECORDS_FILE: &str = "windows.bin";
pub const INDEX_FILE: &str = "windows.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub participant_id: String,
    pub session_id: String,
    pub start: f64,
    pub label: u8,
    /// Byte offset of the record's length prefix in `windows.bin`.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowIndex {
    pub windowing: WindowingConfig,
    pub records: Vec<IndexEntry>,
}

fn pair_index(p: ModalityPair) -> u8 {
    ModalityPair::ALL.iter().position(|&q| q == p).expect("pair in ALL") as u8
}

pub fn encode(windows: &[LabeledWindow]) -> (Vec<u8>, Vec<u64>) {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(windows.len() as u64).to_le_bytes());
    let mut offsets = Vec::with_capacity(windows.len());
    for w in windows {
        offsets.push(out.len() as u64);
        let mut rec = vec![w.label.id(), w.inputs.len() as u8];
        for (&p, t) in &w.inputs {
            rec.push(pair_index(p));
            rec.extend_from_slice(&(t.shape()[0] as u32).to_le_bytes());
            rec.extend_from_slice(&(t.shape()[1] as u32).to_le_bytes());
        }
        for t in w.inputs.values() {
            for v in t.data() {
                rec.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(rec.len() as u64).to_le_bytes());
        out.extend_from_slice(&rec);
    }
    (out, offsets)
}

pub fn save_windows(dir: &Path, windows: &[LabeledWindow], cfg: &WindowingConfig) -> Result<()> {
    let (bytes, offsets) = encode(windows);
    write_file(&dir.join(RECORDS_FILE), &bytes)?;
    let records = windows
        .iter()
        .zip(offsets)
        .map(|(w, offset)| IndexEntry {
            participant_id: w.source.participant_id.clone(),
            session_id: w.source.session_id.clone(),
            start: w.source.start,
            label: w.label.id(),
            offset,
        })
        .collect();
    write_json(&dir.join(INDEX_FILE), &WindowIndex { windowing: *cfg, records })
}

fn take<'a>(path: &Path, buf: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    if buf.len().saturating_sub(*pos) < n {
        return Err(Error::format(path, "truncated window record"));
    }
    let s = &buf[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

fn u32_at(path: &Path, buf: &[u8], pos: &mut usize) -> Result<u32> {
    Ok(u32::from_le_bytes(take(path, buf, pos, 4)?.try_into().expect("4 bytes")))
}

fn u64_at(path: &Path, buf: &[u8], pos: &mut usize) -> Result<u64> {
    Ok(u64::from_le_bytes(take(path, buf, pos, 8)?.try_into().expect("8 bytes")))
}

/// Decodes a record file; sources come from the index, which must list the
/// records in file order.
pub fn decode(path: &Path, bytes: &[u8], index: &WindowIndex) -> Result<Vec<LabeledWindow>> {
    let mut pos = 0;
    if take(path, bytes, &mut pos, 4)? != MAGIC {
        return Err(Error::format(path, "not a window record file (bad magic)"));
    }
    let version = u32_at(path, bytes, &mut pos)?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported window file version {version}")));
    }
    let count = u64_at(path, bytes, &mut pos)? as usize;
    if count != index.records.len() {
        return Err(Error::format(
            path,
            format!("{count} records but the index lists {}", index.records.len()),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for entry in &index.records {
        if entry.offset != pos as u64 {
            return Err(Error::format(path, format!("record offset {} expected at {pos}", entry.offset)));
        }
        let len = u64_at(path, bytes, &mut pos)? as usize;
        let rec = take(path, bytes, &mut pos, len)?;
        let mut rp = 0;
        let head = take(path, rec, &mut rp, 2)?;
        let label = GestureLabel::from_id(head[0])
            .filter(|l| l.id() == entry.label)
            .ok_or_else(|| Error::format(path, format!("bad label {} for record at {}", head[0], entry.offset)))?;
        let mut shapes = Vec::with_capacity(head[1] as usize);
        for _ in 0..head[1] {
            let idx = take(path, rec, &mut rp, 1)?[0] as usize;
            let pair = *ModalityPair::ALL
                .get(idx)
                .ok_or_else(|| Error::format(path, format!("bad pair index {idx}")))?;
            let r = u32_at(path, rec, &mut rp)? as usize;
            let c = u32_at(path, rec, &mut rp)? as usize;
            shapes.push((pair, r, c));
        }
        let mut inputs = BTreeMap::new();
        for (pair, r, c) in shapes {
            let raw = take(path, rec, &mut rp, r * c * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            inputs.insert(pair, Tensor::new(vec![r, c], data)?);
        }
        if rp != rec.len() {
            return Err(Error::format(path, format!("record at {} has trailing bytes", entry.offset)));
        }
        out.push(LabeledWindow {
            label,
            inputs,
            source: WindowSource {
                participant_id: entry.participant_id.clone(),
                session_id: entry.session_id.clone(),
                start: entry.start,
            },
        });
    }
    if pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last record"));
    }
    Ok(out)
}

pub fn load_windows(dir: &Path) -> Result<(Vec<LabeledWindow>, WindowingConfig)> {
    let index: WindowIndex = read_json(&dir.join(INDEX_FILE))?;
    let path = dir.join(RECORDS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok((decode(&path, &bytes, &index)?, index.windowing))
}
