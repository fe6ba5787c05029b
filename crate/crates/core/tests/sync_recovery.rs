//! Clap-anchored alignment undoes injected clock skew and offset.

use gestfuse_core::sync::{preprocess_session, PreprocessConfig, Preprocessed};
use gestfuse_core::synth::{generate_session, inject_clock_skew, SynthConfig};
use gestfuse_core::{Hand, ModalityPair, SensorType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ONSET_TOL: f64 = 0.020;

fn small() -> SynthConfig {
    SynthConfig {
        num_participants: 3,
        sessions_per_participant: 2,
        repetitions: 1,
        ..SynthConfig::default()
    }
}

/// Worst `|map(skew * t + offset) - t|` over annotated onsets, any device.
fn onset_error(pre: &Preprocessed, skew: f64, offset: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for d in &pre.devices {
        for a in &pre.session.annotations {
            worst = worst.max((d.map.apply(skew * a.start + offset) - a.start).abs());
        }
    }
    worst
}

/// Lag in samples maximising the correlation of `x` against `reference`
/// over `[lo, hi)`, searched within `+-max_lag`.
fn best_lag(x: &[f64], reference: &[f64], lo: usize, hi: usize, max_lag: i64) -> i64 {
    let score = |lag: i64| -> f64 {
        (lo..hi)
            .filter_map(|k| {
                let j = k as i64 + lag;
                (j >= 0 && (j as usize) < x.len()).then(|| x[j as usize] * reference[k])
            })
            .sum()
    };
    (-max_lag..=max_lag).max_by(|&a, &b| score(a).total_cmp(&score(b))).unwrap()
}

#[test]
fn random_skew_and_offset_are_recovered_within_20_ms() {
    let cfg = small();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let pcfg = PreprocessConfig::default();
    for p in 0..cfg.num_participants {
        for s in 0..cfg.sessions_per_participant {
            let clean = generate_session(&cfg, p, s).unwrap();
            let skew = rng.random_range(0.95..=1.05);
            let offset = rng.random_range(-5.0..=5.0);
            let pre = preprocess_session(&inject_clock_skew(&clean, skew, offset).unwrap(), &pcfg).unwrap();
            assert_eq!(pre.devices.len(), 4);
            let err = onset_error(&pre, skew, offset);
            assert!(err <= ONSET_TOL, "P{p} S{s} skew {skew} offset {offset}: onset error {err}");

            // The aligned signal itself lines up with the unskewed recording.
            let reference = preprocess_session(&clean, &pcfg).unwrap();
            for hand in Hand::ALL {
                for sensor in [SensorType::Acc, SensorType::Capa] {
                    let pair = ModalityPair::new(hand, sensor);
                    let rate = pair.nominal_rate();
                    let x: Vec<f64> = pre.session.streams[&pair].channel(0).collect();
                    let r: Vec<f64> = reference.session.streams[&pair].channel(0).collect();
                    for a in pre.session.annotations.iter().step_by(5) {
                        let lo = (a.start * rate) as usize;
                        let hi = ((a.end * rate) as usize).min(r.len());
                        let lag = best_lag(&x, &r, lo, hi, (0.1 * rate) as i64);
                        assert!(
                            (lag as f64 / rate).abs() <= ONSET_TOL,
                            "P{p} S{s} {}: lag {lag} samples at {}",
                            pair.key(),
                            a.start
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn skew_098_is_recovered() {
    let clean = generate_session(&small(), 0, 0).unwrap();
    let pre = preprocess_session(&inject_clock_skew(&clean, 0.98, 0.0).unwrap(), &PreprocessConfig::default()).unwrap();
    assert!(onset_error(&pre, 0.98, 0.0) <= ONSET_TOL);
}

#[test]
fn pure_offset_is_recovered_exactly() {
    let clean = generate_session(&small(), 1, 1).unwrap();
    let pre = preprocess_session(&inject_clock_skew(&clean, 1.0, 5.0).unwrap(), &PreprocessConfig::default()).unwrap();
    for d in &pre.devices {
        assert!((d.map.scale - 1.0).abs() < 1e-3, "{:?}", d);
    }
    assert!(onset_error(&pre, 1.0, 5.0) <= ONSET_TOL);
}
