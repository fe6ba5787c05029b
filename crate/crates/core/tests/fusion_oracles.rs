//! LLR and fusion identities against independent oracles.

use gestfuse_core::model::{clamp_renormalize, fuse_llr, llr_per_pair};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Normalised probability vector with positive entries.
fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| (rng.random_range(-4.0..4.0f64)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// `ln(p_i / sum_{j != i} p_j)` with the denominator summed explicitly.
fn explicit_llr(p: &[f64]) -> Vec<f64> {
    (0..p.len())
        .map(|i| {
            let rest: f64 = p.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum();
            (p[i] / rest).ln()
        })
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap()
}

#[test]
fn llr_matches_explicit_denominator_on_1000_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let n = if k % 2 == 0 { 20 } else { rng.random_range(2..32) };
        let p = random_probs(&mut rng, n);
        for (a, b) in llr_per_pair(&p).iter().zip(explicit_llr(&p)) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-12, "max deviation {worst:e}");
}

#[test]
fn worked_llr_values() {
    let l = llr_per_pair(&[0.8, 0.2]);
    assert!((l[0] - 4f64.ln()).abs() < 1e-12 && (l[1] + 4f64.ln()).abs() < 1e-12);
    assert!((l[0] - 1.3863).abs() < 1e-4);
    assert_eq!(llr_per_pair(&[0.5, 0.5]), [0.0, 0.0]);
    let uniform = vec![1.0 / 20.0; 20];
    for v in llr_per_pair(&uniform) {
        assert!((v + 19f64.ln()).abs() < 1e-12);
    }
    let eight = fuse_llr(&vec![llr_per_pair(&uniform); 8]);
    for v in eight {
        assert!((v + 8.0 * 19f64.ln()).abs() < 1e-12);
    }
}

#[test]
fn clamping_keeps_extreme_heads_finite() {
    let mut logits = [0.0; 20];
    logits[3] = 1e4;
    let m = logits.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let p = clamp_renormalize(&e.iter().map(|v| v / s).collect::<Vec<_>>(), 1e-7);
    assert!(p[3] <= 1.0 - 1e-7 + 1e-15);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(llr_per_pair(&p).iter().all(|v| v.is_finite()));
}

fn rows(seed: u64, pairs: usize, n: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs).map(|_| llr_per_pair(&random_probs(&mut rng, n))).collect()
}

proptest! {
    #[test]
    fn fusion_is_permutation_invariant(pairs in 1usize..9, n in 2usize..21, seed in any::<u64>()) {
        let mut r = rows(seed, pairs, n);
        let before = fuse_llr(&r);
        r.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let after = fuse_llr(&r);
        prop_assert_eq!(
            before.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            after.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    /// On values whose sums are all representable the identity is exact.
    #[test]
    fn fusion_is_additive_over_disjoint_subsets(
        k in proptest::collection::vec(proptest::collection::vec(-(1i64 << 30)..(1i64 << 30), 20), 2..9),
        cut in 1usize..8,
    ) {
        let r: Vec<Vec<f64>> = k.iter().map(|row| row.iter().map(|&v| v as f64 / (1u64 << 20) as f64).collect()).collect();
        let cut = cut.min(r.len() - 1);
        let (a, b) = r.split_at(cut);
        let sum: Vec<f64> = fuse_llr(a).iter().zip(fuse_llr(b)).map(|(x, y)| x + y).collect();
        prop_assert_eq!(fuse_llr(&r), sum);
    }

    /// For arbitrary floats the two sides differ only by final rounding.
    #[test]
    fn fusion_is_additive_up_to_rounding(pairs in 2usize..9, cut in 1usize..8, seed in any::<u64>()) {
        let r = rows(seed, pairs, 20);
        let cut = cut.min(pairs - 1);
        let (a, b) = r.split_at(cut);
        let whole = fuse_llr(&r);
        for (i, (x, y)) in fuse_llr(a).iter().zip(fuse_llr(b)).enumerate() {
            let scale: f64 = r.iter().map(|row| row[i].abs()).sum();
            prop_assert!((whole[i] - (x + y)).abs() <= 4.0 * f64::EPSILON * scale);
        }
    }

    #[test]
    fn uniform_pair_does_not_change_the_decision(pairs in 1usize..8, seed in any::<u64>()) {
        let mut r = rows(seed, pairs, 20);
        let before = argmax(&fuse_llr(&r));
        r.push(llr_per_pair(&[1.0 / 20.0; 20]));
        prop_assert_eq!(argmax(&fuse_llr(&r)), before);
    }
}
