//! Binary checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic   b"GFCK"
//! version u32
//! hlen    u64, then `hlen` bytes of JSON header
//! tensor records, in header order:
//!     name_len u32, name (utf-8)
//!     rank u32, dims u64 x rank
//!     count u64, then `count` f64 values
//! ```
//!
//! The header records the kind (`model` or `trainer`), caller metadata and,
//! per stored model, its config, Adam step count and number of tensors.

use std::fs;
use std::path::Path;

use gestfuse_core::model::ModelState;
use gestfuse_core::nn::Tensor;
use gestfuse_core::train::{History, TrainConfig, TrainerState};
use gestfuse_core::ModelConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{write_file, Error, Result};

pub const MAGIC: &[u8; 4] = b"GFCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StateHeader {
    role: String,
    config: ModelConfig,
    adam_step: u64,
    tensors: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainerHeader {
    train_config: TrainConfig,
    history: History,
    stale: usize,
    done: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: Value,
    states: Vec<StateHeader>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trainer: Option<TrainerHeader>,
}

fn encode(header: &Header, states: &[&ModelState]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| Error::Usage(format!("cannot encode header: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for s in states {
        for (name, t) in &s.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(t.len() as u64).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn state_header(role: &str, s: &ModelState) -> StateHeader {
    StateHeader {
        role: role.into(),
        config: s.config.clone(),
        adam_step: s.adam_step,
        tensors: s.tensors.len(),
    }
}

struct Cursor<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::format(self.path, "length overflows usize"))
    }
}

fn decode(path: &Path, bytes: &[u8]) -> Result<(Header, Vec<ModelState>)> {
    let mut c = Cursor { path, buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let hlen = c.len()?;
    let header: Header = serde_json::from_slice(c.take(hlen)?).map_err(|e| Error::json(path, e))?;
    let mut states = Vec::with_capacity(header.states.len());
    for sh in &header.states {
        let mut tensors = Vec::with_capacity(sh.tensors.min(1 << 16));
        for _ in 0..sh.tensors {
            let nlen = c.u32()? as usize;
            let name = std::str::from_utf8(c.take(nlen)?)
                .map_err(|_| Error::format(path, "tensor name is not utf-8"))?
                .to_string();
            let rank = c.u32()? as usize;
            let shape = (0..rank).map(|_| c.len()).collect::<Result<Vec<_>>>()?;
            let n = c.len()?;
            let expect = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            if expect != Some(n) {
                return Err(Error::format(
                    path,
                    format!("tensor {name} holds {n} values, shape {shape:?} disagrees"),
                ));
            }
            let raw = c.take(n.checked_mul(8).ok_or_else(|| Error::format(path, "tensor too large"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        states.push(ModelState {
            config: sh.config.clone(),
            adam_step: sh.adam_step,
            tensors,
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }
    Ok((header, states))
}

fn read(path: &Path) -> Result<(Header, Vec<ModelState>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes)
}

pub fn save_model(path: &Path, state: &ModelState, meta: Value) -> Result<()> {
    let header = Header {
        kind: "model".into(),
        meta,
        states: vec![state_header("model", state)],
        trainer: None,
    };
    write_file(path, &encode(&header, &[state])?)
}

pub fn load_model(path: &Path) -> Result<(ModelState, Value)> {
    let (h, mut states) = read(path)?;
    if h.kind != "model" || states.len() != 1 {
        return Err(Error::format(path, format!("expected a model checkpoint, found `{}`", h.kind)));
    }
    Ok((states.pop().expect("one state"), h.meta))
}

pub fn save_trainer(path: &Path, state: &TrainerState, meta: Value) -> Result<()> {
    let header = Header {
        kind: "trainer".into(),
        meta,
        states: vec![state_header("current", &state.model), state_header("best", &state.best)],
        trainer: Some(TrainerHeader {
            train_config: state.train_config.clone(),
            history: state.history.clone(),
            stale: state.stale,
            done: state.done,
        }),
    };
    write_file(path, &encode(&header, &[&state.model, &state.best])?)
}

pub fn load_trainer(path: &Path) -> Result<(TrainerState, Value)> {
    let (h, states) = read(path)?;
    let (Some(t), Ok([model, best])) = (h.trainer, <[ModelState; 2]>::try_from(states)) else {
        return Err(Error::format(path, "expected a trainer checkpoint"));
    };
    Ok((
        TrainerState {
            train_config: t.train_config,
            model,
            best,
            history: t.history,
            stale: t.stale,
            done: t.done,
        },
        h.meta,
    ))
}
