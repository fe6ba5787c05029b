//! Standardisation, clap detection and alignment of sensor clocks to the
//! video timeline.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Device, Hand, ModalityPair, SensorStream, SensorType, Session};

pub const SIGMA_FLOOR: f64 = 1e-8;

/// Margin added on both sides of a clap cluster when excluding windows.
pub const CLAP_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClapConfig {
    /// Peaks must exceed `mean + k * std` of the acceleration magnitude.
    pub k: f64,
    /// Minimum separation between accepted peaks, seconds.
    pub min_separation: f64,
    /// Peaks further apart than this start a new cluster, seconds.
    pub cluster_gap: f64,
}

impl Default for ClapConfig {
    fn default() -> Self {
        ClapConfig {
            k: 4.0,
            min_separation: 0.3,
            cluster_gap: 10.0,
        }
    }
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn channel_stats(stream: &SensorStream) -> Result<ChannelStats> {
    if stream.is_empty() {
        return Err(Error::Precondition(format!("{}: empty stream", stream.pair.key())));
    }
    let c = stream.channels();
    let n = stream.len() as f64;
    let mut mean = vec![0.0; c];
    for row in stream.values().chunks_exact(c) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; c];
    for row in stream.values().chunks_exact(c) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
    Ok(ChannelStats { mean, std })
}

/// `(x - mean) / max(std, SIGMA_FLOOR)` per channel, statistics over the
/// whole stream.
pub fn standardize(stream: &SensorStream) -> Result<SensorStream> {
    let stats = channel_stats(stream)?;
    standardize_with(stream, &stats)
}

pub fn standardize_with(stream: &SensorStream, stats: &ChannelStats) -> Result<SensorStream> {
    let c = stream.channels();
    if stats.mean.len() != c || stats.std.len() != c {
        return Err(Error::Shape(format!(
            "{}: stats for {} channels, stream has {}",
            stream.pair.key(),
            stats.mean.len(),
            c
        )));
    }
    let scale: Vec<f64> = stats.std.iter().map(|s| 1.0 / s.max(SIGMA_FLOOR)).collect();
    let mut values = stream.values().to_vec();
    for row in values.chunks_exact_mut(c) {
        for j in 0..c {
            row[j] = (row[j] - stats.mean[j]) * scale[j];
        }
    }
    stream.with_values(values)
}

/// Times of acceleration-magnitude peaks above `mean + k * std`, at least
/// `min_separation` apart (stronger peaks win), in increasing order.
pub fn detect_claps(acc: &SensorStream, cfg: &ClapConfig) -> Result<Vec<f64>> {
    if acc.pair.sensor != SensorType::Acc {
        return Err(Error::Precondition(format!(
            "clap detection needs an ACC stream, got {}",
            acc.pair.key()
        )));
    }
    if acc.is_empty() {
        return Err(Error::Precondition("empty ACC stream".into()));
    }
    let c = acc.channels();
    let mag: Vec<f64> = acc
        .values()
        .chunks_exact(c)
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let n = mag.len() as f64;
    let mean = mag.iter().sum::<f64>() / n;
    let std = (mag.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n).sqrt();
    let threshold = mean + cfg.k * std;

    let mut candidates: Vec<usize> = (0..mag.len())
        .filter(|&i| {
            let left = i == 0 || mag[i] >= mag[i - 1];
            let right = i + 1 == mag.len() || mag[i] > mag[i + 1];
            mag[i] > threshold && left && right
        })
        .collect();
    candidates.sort_by(|&a, &b| mag[b].total_cmp(&mag[a]).then(a.cmp(&b)));
    let ts = acc.timestamps();
    let mut accepted: Vec<f64> = Vec::new();
    for i in candidates {
        if accepted.iter().all(|t| (ts[i] - t).abs() >= cfg.min_separation) {
            accepted.push(ts[i]);
        }
    }
    accepted.sort_by(f64::total_cmp);
    if accepted.len() < 2 {
        return Err(Error::Sync(format!(
            "{}: found {} clap peak(s), need at least 2",
            acc.pair.key(),
            accepted.len()
        )));
    }
    Ok(accepted)
}

/// Splits sorted clap times wherever consecutive claps are more than `gap` apart.
pub fn cluster_claps(times: &[f64], gap: f64) -> Vec<Vec<f64>> {
    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for &t in times {
        match clusters.last_mut() {
            Some(c) if t - c[c.len() - 1] <= gap => c.push(t),
            _ => clusters.push(vec![t]),
        }
    }
    clusters
}

/// Mean times of the first and last clap clusters.
pub fn cluster_anchors(times: &[f64], gap: f64) -> Result<Vec<f64>> {
    let clusters = cluster_claps(times, gap);
    if clusters.len() < 2 {
        return Err(Error::Sync(format!(
            "claps form {} cluster(s), need a leading and a trailing one",
            clusters.len()
        )));
    }
    let mean = |c: &Vec<f64>| c.iter().sum::<f64>() / c.len() as f64;
    Ok(vec![mean(&clusters[0]), mean(&clusters[clusters.len() - 1])])
}

/// `[first - margin, last + margin]` per cluster.
pub fn clap_intervals(times: &[f64], gap: f64, margin: f64) -> Vec<(f64, f64)> {
    cluster_claps(times, gap)
        .into_iter()
        .map(|c| (c[0] - margin, c[c.len() - 1] + margin))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncAnchors {
    pub sensor_claps: Vec<f64>,
    pub video_claps: Vec<f64>,
}

impl SyncAnchors {
    pub fn new(sensor_claps: Vec<f64>, video_claps: Vec<f64>) -> Result<Self> {
        for (name, l) in [("sensor", &sensor_claps), ("video", &video_claps)] {
            if l.len() < 2 {
                return Err(Error::Sync(format!("{name} anchors need at least 2 entries")));
            }
            if l.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Sync(format!("{name} anchors not strictly increasing")));
            }
        }
        Ok(SyncAnchors {
            sensor_claps,
            video_claps,
        })
    }

    pub fn map(&self) -> Result<AffineMap> {
        AffineMap::from_points(
            (self.sensor_claps[0], self.sensor_claps[self.sensor_claps.len() - 1]),
            (self.video_claps[0], self.video_claps[self.video_claps.len() - 1]),
        )
    }
}

/// `t' = v0 + (t - s0) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub s0: f64,
    pub v0: f64,
    pub scale: f64,
}

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap {
        s0: 0.0,
        v0: 0.0,
        scale: 1.0,
    };

    /// Sends `s.0 -> v.0` and `s.1 -> v.1`.
    pub fn from_points(s: (f64, f64), v: (f64, f64)) -> Result<Self> {
        let ds = s.1 - s.0;
        let dv = v.1 - v.0;
        if !(ds.abs() > 0.0) || !(dv.abs() > 0.0) || !(ds * dv > 0.0) {
            return Err(Error::Sync(format!(
                "degenerate anchors: sensor ({}, {}) video ({}, {})",
                s.0, s.1, v.0, v.1
            )));
        }
        Ok(AffineMap {
            s0: s.0,
            v0: v.0,
            scale: dv / ds,
        })
    }

    pub fn apply(&self, t: f64) -> f64 {
        self.v0 + (t - self.s0) * self.scale
    }

    pub fn inverse(&self) -> AffineMap {
        AffineMap {
            s0: self.v0,
            v0: self.s0,
            scale: 1.0 / self.scale,
        }
    }
}

pub fn align_to_video(stream: &SensorStream, anchors: &SyncAnchors) -> Result<SensorStream> {
    apply_map(stream, &anchors.map()?)
}

pub fn apply_map(stream: &SensorStream, map: &AffineMap) -> Result<SensorStream> {
    stream.with_timestamps(stream.timestamps().iter().map(|&t| map.apply(t)).collect())
}

/// Number of grid points `0, 1/rate, ...` covering `[0, duration]`.
pub fn grid_len(duration: f64, rate: f64) -> usize {
    (duration * rate + 1e-9).floor() as usize + 1
}

/// Linear interpolation onto `t_k = k / nominal_rate` for `t_k <= duration`,
/// holding the edge values outside the sampled range.
pub fn resample_to_grid(stream: &SensorStream, duration: f64) -> Result<SensorStream> {
    if stream.is_empty() {
        return Err(Error::Precondition(format!("{}: empty stream", stream.pair.key())));
    }
    let rate = stream.nominal_rate;
    let n = grid_len(duration, rate);
    let c = stream.channels();
    let ts = stream.timestamps();
    let vs = stream.values();
    let mut grid = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n * c);
    let mut j = 0;
    for k in 0..n {
        let t = k as f64 / rate;
        grid.push(t);
        while j + 1 < ts.len() && ts[j + 1] <= t {
            j += 1;
        }
        if t <= ts[0] {
            out.extend_from_slice(&vs[..c]);
        } else if j + 1 >= ts.len() {
            out.extend_from_slice(&vs[(ts.len() - 1) * c..]);
        } else {
            let w = (t - ts[j]) / (ts[j + 1] - ts[j]);
            for ch in 0..c {
                let a = vs[j * c + ch];
                let b = vs[(j + 1) * c + ch];
                out.push(a + w * (b - a));
            }
        }
    }
    SensorStream::with_device(stream.pair, stream.device, rate, grid, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub clap: ClapConfig,
    /// Skip alignment for data already on the video timeline.
    pub sync: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            clap: ClapConfig::default(),
            sync: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSource {
    /// Claps detected on the device's own accelerometer.
    Own,
    /// Glove without usable IMU claps: borrowed from the same hand's watch.
    Watch,
    /// No anchors available; timestamps left as recorded.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSync {
    pub hand: Hand,
    pub device: Device,
    pub map: AffineMap,
    pub source: AnchorSource,
    pub note: Option<alloc::string::String>,
}

/// A session on the video grid plus what was learned while syncing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub session: Session,
    pub devices: Vec<DeviceSync>,
    /// Video-time intervals around clap clusters.
    pub clap_intervals: Vec<(f64, f64)>,
}

/// Aligns every device clock to the video, resamples to the nominal grid and
/// standardises each channel over the session.
///
/// Each device is aligned with its own clap anchors. A glove without an
/// accelerometer (or whose claps cannot be found) reuses the watch on the
/// same hand; a device with no usable anchors keeps its clock.
pub fn preprocess_session(session: &Session, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    session.validate()?;
    let mut devices = Vec::new();
    let mut maps: BTreeMap<(Hand, Device), AffineMap> = BTreeMap::new();
    let mut clap_times: Option<Vec<f64>> = None;

    let video_anchor = if cfg.sync {
        Some(cluster_anchors(&session.video_claps, cfg.clap.cluster_gap))
    } else {
        None
    };

    for hand in Hand::ALL {
        for device in [Device::Watch, Device::Glove] {
            let acc_pair = ModalityPair::new(hand, SensorType::Acc);
            let acc = match device {
                Device::Watch => session.streams.get(&acc_pair),
                Device::Glove => session.glove_imu.get(&acc_pair),
            };
            let used = session
                .streams
                .keys()
                .any(|p| p.hand == hand && p.sensor.device() == device);
            if !used && acc.is_none() {
                continue;
            }
            let (map, source, note, times) = match &video_anchor {
                None => (AffineMap::IDENTITY, AnchorSource::Identity, None, acc.and_then(|a| detect_claps(a, &cfg.clap).ok())),
                Some(Err(e)) => (AffineMap::IDENTITY, AnchorSource::Identity, Some(format!("{e}")), None),
                Some(Ok(video)) => match acc.map(|a| own_map(a, video, &cfg.clap)) {
                    Some(Ok((m, t))) => (m, AnchorSource::Own, None, Some(t)),
                    other => {
                        let why = match other {
                            Some(Err(e)) => format!("{e}"),
                            _ => format!("no {} accelerometer", device_key(device)),
                        };
                        match (device, maps.get(&(hand, Device::Watch))) {
                            (Device::Glove, Some(m)) => (*m, AnchorSource::Watch, Some(why), None),
                            _ => (AffineMap::IDENTITY, AnchorSource::Identity, Some(why), None),
                        }
                    }
                },
            };
            if clap_times.is_none() {
                if let Some(t) = times {
                    clap_times = Some(t.iter().map(|&x| map.apply(x)).collect());
                }
            }
            maps.insert((hand, device), map);
            devices.push(DeviceSync {
                hand,
                device,
                map,
                source,
                note,
            });
        }
    }

    let mut out = session.clone();
    out.glove_imu.clear();
    for (pair, stream) in &session.streams {
        let map = maps
            .get(&(pair.hand, pair.sensor.device()))
            .copied()
            .unwrap_or(AffineMap::IDENTITY);
        let aligned = apply_map(stream, &map)?;
        let grid = resample_to_grid(&aligned, session.video_duration)?;
        out.streams.insert(*pair, standardize(&grid)?);
    }
    let clap_intervals = match (cfg.sync, &clap_times) {
        (true, _) if !session.video_claps.is_empty() => {
            clap_intervals(&session.video_claps, cfg.clap.cluster_gap, CLAP_MARGIN)
        }
        (_, Some(t)) => clap_intervals(t, cfg.clap.cluster_gap, CLAP_MARGIN),
        _ => Vec::new(),
    };
    Ok(Preprocessed {
        session: out,
        devices,
        clap_intervals,
    })
}

fn device_key(d: Device) -> &'static str {
    match d {
        Device::Watch => "watch",
        Device::Glove => "glove",
    }
}

fn own_map(acc: &SensorStream, video: &[f64], cfg: &ClapConfig) -> Result<(AffineMap, Vec<f64>)> {
    let times = detect_claps(acc, cfg)?;
    let anchors = SyncAnchors::new(cluster_anchors(&times, cfg.cluster_gap)?, video.to_vec())?;
    Ok((anchors.map()?, times))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(sensor: SensorType) -> ModalityPair {
        ModalityPair::new(Hand::Left, sensor)
    }

    fn stream(sensor: SensorType, ts: Vec<f64>, vals: Vec<f64>) -> SensorStream {
        SensorStream::new(pair(sensor), ts, vals).unwrap()
    }

    fn acc_with_spikes(spikes: &[f64], dur: f64, seed: u64) -> SensorStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (dur * 100.0) as usize;
        let ts: Vec<f64> = (0..n).map(|i| i as f64 / 100.0).collect();
        let mut vals = Vec::with_capacity(n * 3);
        for &t in &ts {
            let spike = spikes.iter().any(|s| (t - s).abs() < 0.005);
            for c in 0..3 {
                let base = rng.random_range(-0.05..0.05);
                vals.push(if spike && c == 0 { 8.0 } else { base });
            }
        }
        stream(SensorType::Acc, ts, vals)
    }

    #[test]
    fn standardize_three_values() {
        let s = stream(SensorType::Capa, vec![0.0, 1.0, 2.0], {
            let mut v = Vec::new();
            for x in [1.0, 2.0, 3.0] {
                v.extend([x, 5.0, x, x]);
            }
            v
        });
        let z = standardize(&s).unwrap();
        let ch0: Vec<f64> = z.channel(0).collect();
        let e = (1.5f64).sqrt();
        for (a, b) in ch0.iter().zip([-e, 0.0, e]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(z.channel(1).all(|v| v == 0.0));
        let again = standardize(&z).unwrap();
        for (a, b) in again.values().iter().zip(z.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn detects_injected_claps() {
        let spikes = [1.0, 1.5, 2.0, 2.5, 3.0, 97.0, 97.5, 98.0, 98.5, 99.0];
        let s = acc_with_spikes(&spikes, 100.0, 1);
        let found = detect_claps(&s, &ClapConfig::default()).unwrap();
        assert_eq!(found.len(), 10);
        for (f, e) in found.iter().zip(spikes) {
            assert!((f - e).abs() <= 0.01 + 1e-9);
        }
        assert_eq!(cluster_anchors(&found, 10.0).unwrap(), vec![2.0, 98.0]);
    }

    #[test]
    fn pure_noise_has_no_claps() {
        let s = acc_with_spikes(&[], 60.0, 2);
        assert!(matches!(detect_claps(&s, &ClapConfig::default()), Err(Error::Sync(_))));
    }

    #[test]
    fn two_claps_are_enough() {
        let s = acc_with_spikes(&[5.0, 50.0], 60.0, 3);
        assert_eq!(detect_claps(&s, &ClapConfig::default()).unwrap(), vec![5.0, 50.0]);
    }

    #[test]
    fn affine_closed_form() {
        let a = SyncAnchors::new(vec![2.0, 98.0], vec![2.0, 100.0]).unwrap();
        let m = a.map().unwrap();
        assert!((m.apply(50.0) - 51.0).abs() < 1e-12);
        assert_eq!(m.apply(2.0), 2.0);
        assert_eq!(m.apply(98.0), 100.0);
        assert!((m.inverse().apply(m.apply(37.3)) - 37.3).abs() < 1e-9);
        assert!(AffineMap::from_points((3.0, 3.0), (1.0, 2.0)).is_err());
        let same = SyncAnchors::new(vec![1.0, 9.0], vec![1.0, 9.0]).unwrap();
        let s = stream(SensorType::Acc, vec![0.0, 4.0], vec![0.0; 6]);
        assert_eq!(align_to_video(&s, &same).unwrap(), s);
    }

    #[test]
    fn resample_cases() {
        let s = SensorStream::with_device(pair(SensorType::Acc), Device::Watch, 2.0, vec![0.25, 1.0], vec![0.0, 0.0, 0.0, 10.0, 10.0, 10.0])
            .unwrap();
        let r = resample_to_grid(&s, 1.5).unwrap();
        assert_eq!(r.timestamps(), &[0.0, 0.5, 1.0, 1.5]);
        let ch: Vec<f64> = r.channel(0).collect();
        assert_eq!(ch[0], 0.0);
        assert!((ch[1] - 10.0 / 3.0).abs() < 1e-12);
        assert_eq!(&ch[2..], &[10.0, 10.0]);

        let mid = SensorStream::with_device(pair(SensorType::Acc), Device::Watch, 2.0, vec![0.0, 1.0], vec![0.0, 0.0, 0.0, 10.0, 10.0, 10.0])
            .unwrap();
        assert_eq!(resample_to_grid(&mid, 1.0).unwrap().row(1), &[5.0, 5.0, 5.0]);
        let on_grid = resample_to_grid(&mid, 1.0).unwrap();
        assert_eq!(resample_to_grid(&on_grid, 1.0).unwrap(), on_grid);
    }
}
