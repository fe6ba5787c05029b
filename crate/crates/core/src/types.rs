//! Domain types shared by every stage of the pipeline.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub const ALL: [Hand; 2] = [Hand::Left, Hand::Right];

    pub fn key(self) -> &'static str {
        match self {
            Hand::Left => "left",
            Hand::Right => "right",
        }
    }

    pub fn from_key(s: &str) -> Option<Hand> {
        match s {
            "left" => Some(Hand::Left),
            "right" => Some(Hand::Right),
            _ => None,
        }
    }
}

/// Physical device a stream comes from. Each device has its own clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Device {
    Watch,
    Glove,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SensorType {
    Acc,
    Gyro,
    Quat,
    Capa,
}

impl SensorType {
    pub const ALL: [SensorType; 4] = [
        SensorType::Acc,
        SensorType::Gyro,
        SensorType::Quat,
        SensorType::Capa,
    ];

    pub fn channel_count(self) -> usize {
        match self {
            SensorType::Acc | SensorType::Gyro => 3,
            SensorType::Quat | SensorType::Capa => 4,
        }
    }

    pub fn channel_names(self) -> &'static [&'static str] {
        match self {
            SensorType::Acc => &["ACC_X", "ACC_Y", "ACC_Z"],
            SensorType::Gyro => &["GYRO_X", "GYRO_Y", "GYRO_Z"],
            SensorType::Quat => &["QUAT_W", "QUAT_X", "QUAT_Y", "QUAT_Z"],
            SensorType::Capa => &["CAPA_0", "CAPA_1", "CAPA_2", "CAPA_3"],
        }
    }

    /// Model-input device for this sensor. Watch supplies ACC/GYRO/QUAT, the
    /// glove supplies CAPA.
    pub fn device(self) -> Device {
        match self {
            SensorType::Capa => Device::Glove,
            _ => Device::Watch,
        }
    }

    /// Nominal sample rate in Hz of the model-input device.
    pub fn nominal_rate(self) -> f64 {
        match self.device() {
            Device::Watch => 100.0,
            Device::Glove => 50.0,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            SensorType::Acc => "acc",
            SensorType::Gyro => "gyro",
            SensorType::Quat => "quat",
            SensorType::Capa => "capa",
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            SensorType::Acc => "ACC",
            SensorType::Gyro => "GYRO",
            SensorType::Quat => "QUAT",
            SensorType::Capa => "CAP",
        }
    }

    pub fn from_key(s: &str) -> Option<SensorType> {
        SensorType::ALL.into_iter().find(|t| t.key() == s)
    }

    /// Accepts `ACC`, `GYRO`, `QUAT`, `CAP`/`CAPA` in any case.
    pub fn parse(s: &str) -> Option<SensorType> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "cap" => Some(SensorType::Capa),
            other => SensorType::from_key(other),
        }
    }
}

/// One (hand, sensor) input of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModalityPair {
    pub hand: Hand,
    pub sensor: SensorType,
}

impl ModalityPair {
    pub const fn new(hand: Hand, sensor: SensorType) -> Self {
        ModalityPair { hand, sensor }
    }

    /// The eight model inputs, ordered hand-major.
    pub const ALL: [ModalityPair; 8] = [
        ModalityPair::new(Hand::Left, SensorType::Acc),
        ModalityPair::new(Hand::Left, SensorType::Gyro),
        ModalityPair::new(Hand::Left, SensorType::Quat),
        ModalityPair::new(Hand::Left, SensorType::Capa),
        ModalityPair::new(Hand::Right, SensorType::Acc),
        ModalityPair::new(Hand::Right, SensorType::Gyro),
        ModalityPair::new(Hand::Right, SensorType::Quat),
        ModalityPair::new(Hand::Right, SensorType::Capa),
    ];

    /// File stem, e.g. `left_acc`.
    pub fn key(self) -> String {
        format!("{}_{}", self.hand.key(), self.sensor.key())
    }

    pub fn from_key(s: &str) -> Option<ModalityPair> {
        let (hand, sensor) = s.split_once('_')?;
        Some(ModalityPair::new(
            Hand::from_key(hand)?,
            SensorType::from_key(sensor)?,
        ))
    }

    pub fn channel_count(self) -> usize {
        self.sensor.channel_count()
    }

    pub fn nominal_rate(self) -> f64 {
        self.sensor.nominal_rate()
    }

    /// Samples per window of the given length.
    pub fn window_len(self, window_seconds: f64) -> usize {
        (window_seconds * self.nominal_rate()).round() as usize
    }
}

impl fmt::Display for ModalityPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hand = match self.hand {
            Hand::Left => "Left",
            Hand::Right => "Right",
        };
        write!(f, "{}-{}", hand, self.sensor.short_name())
    }
}

const LABEL_NAMES: [&str; 21] = [
    "Brake",
    "Brake Fire Left",
    "Brake Fire Right",
    "Come Close",
    "Cut Engine Left",
    "Cut Engine Right",
    "Down",
    "Engine Start Left",
    "Engine Start Right",
    "Follow",
    "Left",
    "Move Away",
    "Negative",
    "Release Brake",
    "Right",
    "Slow Down",
    "Stop",
    "Straight",
    "Take Photo",
    "Up",
    "Null Class",
];

/// Gesture class id. `0..20` are gestures, `20` is the Null class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct GestureLabel(u8);

impl GestureLabel {
    pub const NULL: GestureLabel = GestureLabel(20);
    pub const TAKE_PHOTO: GestureLabel = GestureLabel(18);
    /// Number of gesture (non-Null) classes.
    pub const NUM_GESTURES: usize = 20;

    pub fn from_id(id: u8) -> Option<GestureLabel> {
        (id as usize <= Self::NUM_GESTURES).then_some(GestureLabel(id))
    }

    pub fn from_name(name: &str) -> Option<GestureLabel> {
        LABEL_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| GestureLabel(i as u8))
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        LABEL_NAMES[self.0 as usize]
    }

    pub fn is_null(self) -> bool {
        self == Self::NULL
    }

    pub fn gestures() -> impl Iterator<Item = GestureLabel> {
        (0..Self::NUM_GESTURES as u8).map(GestureLabel)
    }
}

impl TryFrom<u8> for GestureLabel {
    type Error = String;

    fn try_from(id: u8) -> core::result::Result<Self, String> {
        GestureLabel::from_id(id).ok_or_else(|| format!("label id {id} out of range 0..=20"))
    }
}

impl From<GestureLabel> for u8 {
    fn from(l: GestureLabel) -> u8 {
        l.0
    }
}

impl fmt::Display for GestureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The 21-entry gesture label table.
pub fn label_map() -> Vec<(u8, &'static str)> {
    LABEL_NAMES
        .iter()
        .enumerate()
        .map(|(i, n)| (i as u8, *n))
        .collect()
}

/// One sensor's timestamped series for one session. `values` is row-major
/// `[num_samples x channel_count]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorStream {
    pub pair: ModalityPair,
    pub device: Device,
    pub nominal_rate: f64,
    timestamps: Vec<f64>,
    values: Vec<f64>,
}

impl SensorStream {
    /// Builds a model-input stream; the device is implied by the sensor type.
    pub fn new(pair: ModalityPair, timestamps: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::with_device(
            pair,
            pair.sensor.device(),
            pair.nominal_rate(),
            timestamps,
            values,
        )
    }

    pub fn with_device(
        pair: ModalityPair,
        device: Device,
        nominal_rate: f64,
        timestamps: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let c = pair.channel_count();
        if values.len() != timestamps.len() * c {
            return Err(Error::Shape(format!(
                "{}: {} values for {} timestamps x {} channels",
                pair.key(),
                values.len(),
                timestamps.len(),
                c
            )));
        }
        if !(nominal_rate > 0.0) {
            return Err(Error::Data(format!("{}: non-positive rate", pair.key())));
        }
        if let Some(i) = timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Data(format!(
                "{}: timestamps not strictly increasing at sample {}",
                pair.key(),
                i + 1
            )));
        }
        if timestamps.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{}: non-finite sample", pair.key())));
        }
        Ok(SensorStream {
            pair,
            device,
            nominal_rate,
            timestamps,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.pair.channel_count()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.channels();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn channel(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(c).step_by(self.channels()).copied()
    }

    /// Same stream with replaced timestamps (values untouched).
    pub fn with_timestamps(&self, timestamps: Vec<f64>) -> Result<Self> {
        Self::with_device(
            self.pair,
            self.device,
            self.nominal_rate,
            timestamps,
            self.values.clone(),
        )
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::with_device(
            self.pair,
            self.device,
            self.nominal_rate,
            self.timestamps.clone(),
            values,
        )
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.timestamps, self.values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: GestureLabel,
    pub start: f64,
    pub end: f64,
}

impl Annotation {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Length of the intersection with `[start, end]`.
    pub fn overlap(&self, start: f64, end: f64) -> f64 {
        let lo = if self.start > start { self.start } else { start };
        let hi = if self.end < end { self.end } else { end };
        if hi > lo {
            hi - lo
        } else {
            0.0
        }
    }
}

/// One recording session. Streams and annotations share the video timebase
/// once synchronised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub participant_id: String,
    pub session_id: String,
    /// Model-input streams; an absent pair is the missing-modality case.
    pub streams: BTreeMap<ModalityPair, SensorStream>,
    /// Glove IMU (ACC/GYRO) streams. Used for glove clock synchronisation only.
    pub glove_imu: BTreeMap<ModalityPair, SensorStream>,
    pub annotations: Vec<Annotation>,
    pub video_duration: f64,
    /// Clap times marked on the video timeline, if known.
    pub video_claps: Vec<f64>,
}

impl Session {
    pub fn validate(&self) -> Result<()> {
        if self.streams.is_empty() {
            return Err(Error::Data(format!(
                "session {}/{} has no streams",
                self.participant_id, self.session_id
            )));
        }
        for (pair, s) in self.streams.iter().chain(self.glove_imu.iter()) {
            if s.pair != *pair {
                return Err(Error::Data(format!("stream keyed {} holds {}", pair.key(), s.pair.key())));
            }
        }
        if !(self.video_duration > 0.0) {
            return Err(Error::Data("video duration must be positive".into()));
        }
        for a in &self.annotations {
            if !(a.start < a.end) {
                return Err(Error::Data(format!(
                    "annotation [{}, {}] has start >= end",
                    a.start, a.end
                )));
            }
            if a.start < 0.0 || a.end > self.video_duration {
                return Err(Error::Data(format!(
                    "annotation [{}, {}] outside [0, {}]",
                    a.start, a.end, self.video_duration
                )));
            }
            if a.label.is_null() {
                return Err(Error::Data("annotations cannot carry the Null label".into()));
            }
        }
        let mut sorted: Vec<&Annotation> = self.annotations.iter().collect();
        sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
        if let Some(w) = sorted.windows(2).find(|w| w[1].start < w[0].end) {
            return Err(Error::Data(format!(
                "annotations [{}, {}] and [{}, {}] overlap",
                w[0].start, w[0].end, w[1].start, w[1].end
            )));
        }
        Ok(())
    }

    pub fn key(&self) -> SessionKey {
        SessionKey {
            participant_id: self.participant_id.clone(),
            session_id: self.session_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionKey {
    pub participant_id: String,
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSource {
    pub participant_id: String,
    pub session_id: String,
    pub start: f64,
}

/// A fixed-duration multi-modality slice. Each tensor is `[T x C]` for its pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindow {
    pub label: GestureLabel,
    pub inputs: BTreeMap<ModalityPair, Tensor>,
    pub source: WindowSource,
}

impl LabeledWindow {
    pub fn interval(&self, window_seconds: f64) -> (f64, f64) {
        (self.source.start, self.source.start + window_seconds)
    }

    /// Checks every present pair has shape `[round(window * rate) x C]`.
    pub fn validate(&self, window_seconds: f64) -> Result<()> {
        for (pair, t) in &self.inputs {
            let expected = [pair.window_len(window_seconds), pair.channel_count()];
            if t.shape() != expected {
                return Err(Error::Shape(format!(
                    "{} window tensor {:?}, expected {:?}",
                    pair.key(),
                    t.shape(),
                    expected
                )));
            }
        }
        Ok(())
    }
}
