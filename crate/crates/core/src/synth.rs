//! Synthetic multi-participant recordings with exact ground truth.
//!
//! Each gesture class is a pair of per-hand motion templates (axis, number of
//! cycles over the gesture, sine or square wave). The same motion drives the
//! watch ACC, GYRO and QUAT streams of that hand. Glove CAPA carries a finger
//! pose only for Take Photo; during other gestures it shows random,
//! class-independent finger activity. Five claps open and close every session.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Annotation, Device, GestureLabel, Hand, ModalityPair, SensorStream, SensorType, Session};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_participants: usize,
    pub sessions_per_participant: usize,
    /// Repetitions of each of the 20 gestures per session.
    pub repetitions: usize,
    /// Gesture duration range, seconds.
    pub duration: (f64, f64),
    /// Pause between consecutive gestures, seconds.
    pub gap: (f64, f64),
    pub noise_sigma: f64,
    /// Per-participant amplitude scale range.
    pub amplitude: (f64, f64),
    /// Per-participant phase offset drawn from `[-phase, phase]`, radians.
    pub phase: f64,
    pub clap_count: usize,
    pub clap_spacing: f64,
    pub clap_magnitude: f64,
    /// Probability of class-independent finger activity during a gesture.
    pub finger_activity: f64,
    pub watch_rate: f64,
    pub glove_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_participants: 6,
            sessions_per_participant: 5,
            repetitions: 4,
            duration: (2.5, 3.2),
            gap: (0.6, 1.4),
            noise_sigma: 0.05,
            amplitude: (0.8, 1.2),
            phase: 0.6,
            clap_count: 5,
            clap_spacing: 0.5,
            clap_magnitude: 8.0,
            finger_activity: 0.7,
            watch_rate: 100.0,
            glove_rate: 50.0,
            seed: 7,
        }
    }
}

/// Silence before the first and after the last clap.
const LEAD: f64 = 1.0;
/// Pause between a clap block and the gestures.
const CLAP_PAUSE: f64 = 2.0;

impl SynthConfig {
    pub fn gestures_per_session(&self) -> usize {
        self.repetitions * GestureLabel::NUM_GESTURES
    }

    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi;
        if self.num_participants == 0 || self.sessions_per_participant == 0 || self.repetitions == 0 {
            return Err(Error::Config("participant, session and repetition counts must be positive".into()));
        }
        if !range_ok(self.duration) || !range_ok(self.gap) || !range_ok(self.amplitude) {
            return Err(Error::Config("duration, gap and amplitude ranges need 0 < lo <= hi".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.phase >= 0.0) || !(0.0..=1.0).contains(&self.finger_activity) {
            return Err(Error::Config("noise and phase must be non-negative, finger activity a probability".into()));
        }
        if self.clap_count < 2 || !(self.clap_spacing > 0.0) || !(self.clap_magnitude > 0.0) {
            return Err(Error::Config("need at least 2 claps with positive spacing and magnitude".into()));
        }
        if !(self.watch_rate > 0.0) || !(self.glove_rate > 0.0) {
            return Err(Error::Config("sample rates must be positive".into()));
        }
        Ok(())
    }
}

pub fn participant_id(p: usize) -> String {
    format!("P{:02}", p + 1)
}

pub fn session_id(s: usize) -> String {
    format!("S{}", s + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Wave {
    Sine,
    Square,
}

/// One hand's motion during a gesture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub axis: usize,
    pub cycles: f64,
    pub wave: Wave,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GestureTemplate {
    pub label: GestureLabel,
    pub left: Option<Motion>,
    pub right: Option<Motion>,
    /// Finger pose added to the CAPA channels of both gloves.
    pub finger_pose: Option<[f64; 4]>,
}

impl GestureTemplate {
    pub fn motion(&self, hand: Hand) -> Option<Motion> {
        match hand {
            Hand::Left => self.left,
            Hand::Right => self.right,
        }
    }
}

const X: usize = 0;
const Y: usize = 1;
const Z: usize = 2;
const TAKE_PHOTO_POSE: [f64; 4] = [0.9, 0.7, 0.45, 0.2];

const fn m(axis: usize, cycles: f64, wave: Wave) -> Option<Motion> {
    Some(Motion {
        axis,
        cycles,
        wave,
        amplitude: 1.0,
    })
}

/// Templates indexed by label id. Left/Right variants are mirror images.
pub fn templates() -> [GestureTemplate; GestureLabel::NUM_GESTURES] {
    use Wave::{Sine as S, Square as Q};
    let faint = Some(Motion {
        axis: Y,
        cycles: 1.0,
        wave: S,
        amplitude: 0.4,
    });
    let table: [(Option<Motion>, Option<Motion>); 20] = [
        (m(Z, 1.0, S), m(Z, 1.0, S)), // Brake
        (m(Y, 2.0, S), None),         // Brake Fire Left
        (None, m(Y, 2.0, S)),         // Brake Fire Right
        (m(X, 2.0, S), m(X, 2.0, S)), // Come Close
        (m(X, 3.0, Q), None),         // Cut Engine Left
        (None, m(X, 3.0, Q)),         // Cut Engine Right
        (None, m(Z, 1.0, Q)),         // Down
        (m(Z, 3.0, S), None),         // Engine Start Left
        (None, m(Z, 3.0, S)),         // Engine Start Right
        (None, m(Y, 1.0, S)),         // Follow
        (m(X, 1.0, S), None),         // Left
        (None, m(X, 2.0, S)),         // Move Away
        (m(Y, 3.0, S), m(Y, 3.0, S)), // Negative
        (m(Z, 2.0, Q), m(Z, 2.0, Q)), // Release Brake
        (None, m(X, 1.0, S)),         // Right
        (m(Y, 1.0, Q), m(Y, 1.0, Q)), // Slow Down
        (m(X, 1.0, Q), m(X, 1.0, Q)), // Stop
        (m(X, 3.0, S), m(X, 3.0, S)), // Straight
        (faint, faint),               // Take Photo
        (None, m(Z, 2.0, S)),         // Up
    ];
    core::array::from_fn(|i| GestureTemplate {
        label: GestureLabel::from_id(i as u8).expect("gesture id"),
        left: table[i].0,
        right: table[i].1,
        finger_pose: (i == GestureLabel::TAKE_PHOTO.index()).then_some(TAKE_PHOTO_POSE),
    })
}

/// Fixed per-participant motion style.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticipantStyle {
    pub amplitude: f64,
    pub phase: f64,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn participant_style(cfg: &SynthConfig, participant: usize) -> ParticipantStyle {
    let mut rng = rng_for(cfg.seed, 1 + participant as u64);
    let (lo, hi) = cfg.amplitude;
    ParticipantStyle {
        amplitude: lo + (hi - lo) * rng.random::<f64>(),
        phase: if cfg.phase > 0.0 {
            rng.random_range(-cfg.phase..=cfg.phase)
        } else {
            0.0
        },
    }
}

/// A scheduled gesture and its non-discriminative finger activity.
#[derive(Debug, Clone, Copy)]
struct Scheduled {
    label: GestureLabel,
    start: f64,
    end: f64,
    /// Per-channel amplitude, start and end fraction of the gesture.
    fingers: Option<([f64; 4], f64, f64)>,
}

fn tukey(u: f64) -> f64 {
    const TAPER: f64 = 0.15;
    if !(0.0..=1.0).contains(&u) {
        0.0
    } else if u < TAPER {
        0.5 * (1.0 - (PI * u / TAPER).cos())
    } else if u > 1.0 - TAPER {
        0.5 * (1.0 - (PI * (1.0 - u) / TAPER).cos())
    } else {
        1.0
    }
}

fn wave(w: Wave, theta: f64) -> f64 {
    match w {
        Wave::Sine => theta.sin(),
        Wave::Square => (3.0 * theta.sin()).tanh() / 3f64.tanh(),
    }
}

fn wave_cos(w: Wave, theta: f64) -> f64 {
    match w {
        Wave::Sine => theta.cos(),
        Wave::Square => (3.0 * theta.cos()).tanh() / 3f64.tanh(),
    }
}

/// Noise-free model of one hand's sensors at video time `t`.
struct HandModel<'a> {
    hand: Hand,
    style: ParticipantStyle,
    schedule: &'a [Scheduled],
    templates: &'a [GestureTemplate; GestureLabel::NUM_GESTURES],
    claps: &'a [f64],
    clap_magnitude: f64,
    capa_baseline: [f64; 4],
}

const ACC_GAIN: f64 = 1.0;
const GYRO_GAIN: f64 = 1.5;
const QUAT_ANGLE: f64 = 0.8;

impl HandModel<'_> {
    fn active(&self, t: f64) -> Option<(&Scheduled, f64)> {
        let i = self.schedule.partition_point(|g| g.end <= t);
        let g = self.schedule.get(i)?;
        (t >= g.start).then(|| (g, (t - g.start) / (g.end - g.start)))
    }

    /// `(envelope * amplitude, phase angle, motion)` if this hand moves at `t`.
    fn motion_at(&self, t: f64) -> Option<(f64, f64, Motion)> {
        let (g, u) = self.active(t)?;
        let mo = self.templates[g.label.index()].motion(self.hand)?;
        let theta = 2.0 * PI * mo.cycles * u + self.style.phase;
        Some((tukey(u) * mo.amplitude * self.style.amplitude, theta, mo))
    }

    fn clap(&self, t: f64, rate: f64) -> f64 {
        let half = 0.5 / rate;
        if self.claps.iter().any(|&c| (t - c).abs() < half) {
            self.clap_magnitude
        } else {
            0.0
        }
    }

    fn acc(&self, t: f64, rate: f64) -> [f64; 3] {
        let mut v = [0.0, 0.0, 1.0];
        if let Some((a, th, mo)) = self.motion_at(t) {
            v[mo.axis] += ACC_GAIN * a * wave(mo.wave, th);
        }
        v[X] += self.clap(t, rate);
        v
    }

    fn gyro(&self, t: f64) -> [f64; 3] {
        let mut v = [0.0; 3];
        if let Some((a, th, mo)) = self.motion_at(t) {
            v[(mo.axis + 1) % 3] += GYRO_GAIN * a * wave_cos(mo.wave, th);
        }
        v
    }

    fn quat(&self, t: f64) -> [f64; 4] {
        let mut q = [1.0, 0.0, 0.0, 0.0];
        if let Some((a, th, mo)) = self.motion_at(t) {
            let angle = QUAT_ANGLE * a * wave(mo.wave, th);
            q[0] = (0.5 * angle).cos();
            q[1 + mo.axis] = (0.5 * angle).sin();
        }
        q
    }

    fn capa(&self, t: f64) -> [f64; 4] {
        let mut v = self.capa_baseline;
        if let Some((g, u)) = self.active(t) {
            if let Some(pose) = self.templates[g.label.index()].finger_pose {
                let e = tukey(u) * self.style.amplitude;
                for (x, p) in v.iter_mut().zip(pose) {
                    *x += e * p;
                }
            } else if let Some((amp, a, b)) = g.fingers {
                let e = tukey((u - a) / (b - a));
                for (x, p) in v.iter_mut().zip(amp) {
                    *x += e * p;
                }
            }
        }
        v
    }
}

fn sample<const C: usize>(
    rate: f64,
    duration: f64,
    noise: &mut impl FnMut() -> f64,
    f: impl Fn(f64) -> [f64; C],
) -> (Vec<f64>, Vec<f64>) {
    let n = crate::sync::grid_len(duration, rate);
    let mut ts = Vec::with_capacity(n);
    let mut vals = Vec::with_capacity(n * C);
    for k in 0..n {
        let t = k as f64 / rate;
        ts.push(t);
        for v in f(t) {
            vals.push(v + noise());
        }
    }
    (ts, vals)
}

/// Generates one session on the video timeline (sensor clocks undistorted).
pub fn generate_session(cfg: &SynthConfig, participant: usize, session: usize) -> Result<Session> {
    cfg.validate()?;
    let style = participant_style(cfg, participant);
    let mut rng = rng_for(cfg.seed, ((participant as u64 + 1) << 32) | (session as u64 + 1));
    let templates = templates();

    let mut labels: Vec<GestureLabel> = (0..cfg.repetitions).flat_map(|_| GestureLabel::gestures()).collect();
    labels.shuffle(&mut rng);

    // Claps on the 10 ms grid so that every rate in use samples them exactly.
    let on_grid = |t: f64| (t * 100.0).round() / 100.0;
    let block = |first: f64| -> Vec<f64> {
        (0..cfg.clap_count)
            .map(|i| on_grid(first + i as f64 * cfg.clap_spacing))
            .collect()
    };
    let mut claps = block(LEAD);
    let mut t = claps[claps.len() - 1] + CLAP_PAUSE;
    let mut schedule = Vec::with_capacity(labels.len());
    for label in labels {
        let dur = rng.random_range(cfg.duration.0..=cfg.duration.1);
        // A hand closure resembling the photo pose, independent of the class.
        let fingers = (rng.random::<f64>() < cfg.finger_activity).then(|| {
            let scale = rng.random_range(0.6..1.2);
            let amp = core::array::from_fn(|c| TAKE_PHOTO_POSE[c] * scale * rng.random_range(0.85..1.15));
            let a: f64 = rng.random_range(0.0..0.3);
            let b: f64 = a + rng.random_range(0.6..=(1.0 - a));
            (amp, a, b)
        });
        schedule.push(Scheduled {
            label,
            start: t,
            end: t + dur,
            fingers,
        });
        t += dur + rng.random_range(cfg.gap.0..=cfg.gap.1);
    }
    let last_end = schedule.last().map_or(t, |g| g.end);
    claps.extend(block(on_grid(last_end + CLAP_PAUSE)));
    let duration = claps[claps.len() - 1] + LEAD;

    let normal = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let sigma = cfg.noise_sigma;
    let noise = move |r: &mut ChaCha8Rng| if sigma > 0.0 { normal.sample(r) } else { 0.0 };

    let mut streams = BTreeMap::new();
    let mut glove_imu = BTreeMap::new();
    for hand in Hand::ALL {
        let capa_baseline = core::array::from_fn(|c| 1.0 + 0.1 * c as f64 + rng.random_range(-0.05..0.05));
        let model = HandModel {
            hand,
            style,
            schedule: &schedule,
            templates: &templates,
            claps: &claps,
            clap_magnitude: cfg.clap_magnitude,
            capa_baseline,
        };
        let mut nz = || noise(&mut rng);
        let (wr, gr) = (cfg.watch_rate, cfg.glove_rate);
        let put = |sensor: SensorType, device: Device, rate: f64, (ts, vals): (Vec<f64>, Vec<f64>)| {
            let pair = ModalityPair::new(hand, sensor);
            SensorStream::with_device(pair, device, rate, ts, vals).map(|s| (pair, s))
        };
        let acc = put(SensorType::Acc, Device::Watch, wr, sample(wr, duration, &mut nz, |t| model.acc(t, wr)))?;
        let gyro = put(SensorType::Gyro, Device::Watch, wr, sample(wr, duration, &mut nz, |t| model.gyro(t)))?;
        let quat = put(SensorType::Quat, Device::Watch, wr, sample(wr, duration, &mut nz, |t| model.quat(t)))?;
        let capa = put(SensorType::Capa, Device::Glove, gr, sample(gr, duration, &mut nz, |t| model.capa(t)))?;
        let gacc = put(SensorType::Acc, Device::Glove, gr, sample(gr, duration, &mut nz, |t| model.acc(t, gr)))?;
        for (k, s) in [acc, gyro, quat, capa] {
            streams.insert(k, s);
        }
        glove_imu.insert(gacc.0, gacc.1);
    }

    let session = Session {
        participant_id: participant_id(participant),
        session_id: session_id(session),
        streams,
        glove_imu,
        annotations: schedule
            .iter()
            .map(|g| Annotation {
                label: g.label,
                start: g.start,
                end: g.end,
            })
            .collect(),
        video_duration: duration,
        video_claps: claps,
    };
    session.validate()?;
    Ok(session)
}

/// All sessions, participant-major.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<Session>> {
    let mut out = Vec::with_capacity(cfg.num_participants * cfg.sessions_per_participant);
    for p in 0..cfg.num_participants {
        for s in 0..cfg.sessions_per_participant {
            out.push(generate_session(cfg, p, s)?);
        }
    }
    Ok(out)
}

/// Moves every sensor timestamp to `skew * t + offset`; annotations and video
/// claps stay on the video timeline.
pub fn inject_clock_skew(session: &Session, skew: f64, offset: f64) -> Result<Session> {
    if !(skew > 0.0) || !skew.is_finite() || !offset.is_finite() {
        return Err(Error::Precondition(format!("skew {skew} must be positive and offset {offset} finite")));
    }
    let warp = |m: &BTreeMap<ModalityPair, SensorStream>| -> Result<BTreeMap<ModalityPair, SensorStream>> {
        m.iter()
            .map(|(k, s)| {
                let ts = s.timestamps().iter().map(|&t| skew * t + offset).collect();
                Ok((*k, s.with_timestamps(ts)?))
            })
            .collect()
    };
    Ok(Session {
        streams: warp(&session.streams)?,
        glove_imu: warp(&session.glove_imu)?,
        ..session.clone()
    })
}

/// Nearest-centroid classifier on simple per-channel window features. Used
/// as an oracle that the templates are separable, independent of the model.
#[derive(Debug, Clone)]
pub struct NearestCentroid {
    centroids: BTreeMap<GestureLabel, (Vec<f64>, usize)>,
}

/// Per channel of every present pair: the mean and the magnitudes of the
/// first few DFT bins, which ignore where in the window a gesture sits.
pub fn window_features(w: &crate::types::LabeledWindow) -> Vec<f64> {
    const BINS: usize = 6;
    let mut f = Vec::new();
    for x in w.inputs.values() {
        let (t, c) = (x.shape()[0], x.shape()[1]);
        for ch in 0..c {
            let col = (0..t).map(|i| x.data()[i * c + ch]);
            f.push(col.clone().sum::<f64>() / t as f64);
            for k in 1..=BINS {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in col.clone().enumerate() {
                    let a = 2.0 * PI * (k * i) as f64 / t as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                f.push(2.0 * (re * re + im * im).sqrt() / t as f64);
            }
        }
    }
    f
}

impl NearestCentroid {
    pub fn fit(windows: &[&crate::types::LabeledWindow]) -> Self {
        let mut centroids: BTreeMap<GestureLabel, (Vec<f64>, usize)> = BTreeMap::new();
        for w in windows {
            let f = window_features(w);
            let e = centroids.entry(w.label).or_insert_with(|| (alloc::vec![0.0; f.len()], 0));
            for (a, v) in e.0.iter_mut().zip(&f) {
                *a += v;
            }
            e.1 += 1;
        }
        for (c, n) in centroids.values_mut() {
            c.iter_mut().for_each(|v| *v /= *n as f64);
        }
        NearestCentroid { centroids }
    }

    pub fn predict(&self, w: &crate::types::LabeledWindow) -> GestureLabel {
        let f = window_features(w);
        let mut best = (f64::INFINITY, GestureLabel::NULL);
        for (&label, (c, _)) in &self.centroids {
            let d: f64 = c.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, label);
            }
        }
        best.1
    }
}
