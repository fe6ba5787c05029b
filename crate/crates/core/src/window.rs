//! Sliding-window segmentation and threshold-vote labelling.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::types::{Annotation, GestureLabel, LabeledWindow, Session, WindowSource};

/// Tolerance for floating-point boundary comparisons, seconds / fraction.
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowingConfig {
    pub window_seconds: f64,
    pub step_seconds: f64,
    pub vote_threshold: f64,
}

impl Default for WindowingConfig {
    fn default() -> Self {
        WindowingConfig {
            window_seconds: 3.0,
            step_seconds: 1.0,
            vote_threshold: 0.75,
        }
    }
}

impl WindowingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_seconds > 0.0 && self.step_seconds <= self.window_seconds) {
            return Err(Error::Config(format!(
                "need 0 < step ({}) <= window ({})",
                self.step_seconds, self.window_seconds
            )));
        }
        if !(self.vote_threshold > 0.0 && self.vote_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "vote threshold {} outside (0, 1]",
                self.vote_threshold
            )));
        }
        Ok(())
    }

    /// Window start times for a session of length `duration`.
    pub fn starts(&self, duration: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0usize;
        loop {
            let s = k as f64 * self.step_seconds;
            if s + self.window_seconds > duration + EPS {
                break;
            }
            out.push(s);
            k += 1;
        }
        out
    }
}

/// The class whose annotations cover at least `vote_threshold` of the
/// window, else Null.
pub fn vote_label(interval: (f64, f64), annotations: &[Annotation], cfg: &WindowingConfig) -> GestureLabel {
    let mut cover: BTreeMap<GestureLabel, f64> = BTreeMap::new();
    for a in annotations {
        let o = a.overlap(interval.0, interval.1);
        if o > 0.0 {
            *cover.entry(a.label).or_insert(0.0) += o;
        }
    }
    cover
        .into_iter()
        .find(|(_, o)| o / cfg.window_seconds >= cfg.vote_threshold - EPS)
        .map_or(GestureLabel::NULL, |(l, _)| l)
}

/// Cuts an on-grid session into windows; every present pair contributes
/// `round(window * rate)` rows starting at sample `round(start * rate)`.
pub fn segment(session: &Session, cfg: &WindowingConfig) -> Result<Vec<LabeledWindow>> {
    cfg.validate()?;
    let starts = cfg.starts(session.video_duration);
    let mut out = Vec::with_capacity(starts.len());
    for start in starts {
        let mut inputs = BTreeMap::new();
        for (pair, stream) in &session.streams {
            let rate = stream.nominal_rate;
            let len = (cfg.window_seconds * rate).round() as usize;
            let first = (start * rate).round() as usize;
            if first + len > stream.len() {
                return Err(Error::Precondition(format!(
                    "{}: window at {start} s needs samples {}..{}, stream has {} (resample to the grid first)",
                    pair.key(),
                    first,
                    first + len,
                    stream.len()
                )));
            }
            let c = stream.channels();
            let data = stream.values()[first * c..(first + len) * c].to_vec();
            inputs.insert(*pair, Tensor::new(alloc::vec![len, c], data)?);
        }
        out.push(LabeledWindow {
            label: vote_label((start, start + cfg.window_seconds), &session.annotations, cfg),
            inputs,
            source: WindowSource {
                participant_id: session.participant_id.clone(),
                session_id: session.session_id.clone(),
                start,
            },
        });
    }
    Ok(out)
}

/// Drops Null windows and windows intersecting any clap interval.
pub fn filter_training_windows(
    windows: Vec<LabeledWindow>,
    clap_intervals: &[(f64, f64)],
    window_seconds: f64,
) -> Vec<LabeledWindow> {
    windows
        .into_iter()
        .filter(|w| {
            let (s, e) = w.interval(window_seconds);
            !w.label.is_null() && clap_intervals.iter().all(|&(a, b)| e <= a || s >= b)
        })
        .collect()
}

/// Segments a preprocessed session and keeps only trainable windows.
pub fn training_windows(pre: &crate::sync::Preprocessed, cfg: &WindowingConfig) -> Result<Vec<LabeledWindow>> {
    Ok(filter_training_windows(
        segment(&pre.session, cfg)?,
        &pre.clap_intervals,
        cfg.window_seconds,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(label: u8, start: f64, end: f64) -> Annotation {
        Annotation {
            label: GestureLabel::from_id(label).unwrap(),
            start,
            end,
        }
    }

    #[test]
    fn window_counts() {
        let cfg = WindowingConfig::default();
        assert_eq!(cfg.starts(100.0).len(), 98);
        assert_eq!(cfg.starts(3.0).len(), 1);
        assert_eq!(cfg.starts(2.9).len(), 0);
    }

    #[test]
    fn vote_cases() {
        let cfg = WindowingConfig::default();
        let a = [ann(3, 10.0, 14.0)];
        assert_eq!(vote_label((10.5, 13.5), &a, &cfg).id(), 3);
        assert!(vote_label((8.0, 11.0), &a, &cfg).is_null());
        assert_eq!(vote_label((10.0, 13.0), &[ann(3, 10.75, 13.0)], &cfg).id(), 3);
    }

    #[test]
    fn split_annotations_of_one_class_add_up() {
        let cfg = WindowingConfig::default();
        let a = [ann(5, 0.0, 1.2), ann(6, 1.2, 1.5), ann(5, 1.5, 3.0)];
        assert_eq!(vote_label((0.0, 3.0), &a, &cfg).id(), 5);
    }

    #[test]
    fn filter_removes_null_and_claps() {
        let mk = |label: u8, start: f64| LabeledWindow {
            label: GestureLabel::from_id(label).unwrap(),
            inputs: BTreeMap::new(),
            source: WindowSource {
                participant_id: "p".into(),
                session_id: "s".into(),
                start,
            },
        };
        let ws = alloc::vec![mk(3, 10.0), mk(20, 20.0), mk(7, 30.0)];
        let kept = filter_training_windows(ws.clone(), &[], 3.0);
        assert_eq!(kept.iter().map(|w| w.label.id()).collect::<Vec<_>>(), [3, 7]);
        let kept = filter_training_windows(alloc::vec![mk(3, 0.0), mk(4, 5.0)], &[(1.0, 3.5)], 3.0);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].label.id(), 4);
        let clean = alloc::vec![mk(3, 0.0), mk(4, 5.0)];
        assert_eq!(filter_training_windows(clean.clone(), &[], 3.0), clean);
    }
}
