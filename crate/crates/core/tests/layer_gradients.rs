//! Every layer's backward pass against central differences on random shapes.
//!
//! Each case draws inputs, parameters and a random projection `r`, and checks
//! the gradient of `sum(r * y)` with respect to all of them at once.

use gestfuse_core::model::fusion::{fuse_attention, fuse_attention_backward, AttentionGrads, AttentionParams};
use gestfuse_core::nn::attention_pool::{attention_pool_backward, attention_pool_forward, PoolGrads, PoolParams};
use gestfuse_core::nn::batchnorm::{batchnorm_backward, batchnorm_train};
use gestfuse_core::nn::conv::{conv1d_backward, conv1d_forward, ConvShape};
use gestfuse_core::nn::gradcheck::grad_check;
use gestfuse_core::nn::gru::{gru_backward, gru_forward, GruDims, GruGrads, GruParams};
use gestfuse_core::nn::linear::{linear_backward, linear_forward};
use gestfuse_core::nn::loss::cross_entropy_batch;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const H: f64 = 1e-5;

fn randn(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Splits `theta` into consecutive slices of the given lengths.
fn split<'a>(theta: &'a [f64], lens: &[usize]) -> Vec<&'a [f64]> {
    let mut out = Vec::new();
    let mut at = 0;
    for &n in lens {
        out.push(&theta[at..at + n]);
        at += n;
    }
    assert_eq!(at, theta.len());
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_error(theta: &mut [f64], analytic: &[f64], f: impl FnMut(&[f64]) -> f64) -> f64 {
    grad_check(f, theta, analytic, H).max_rel_error
}

fn cfg() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn linear(rows in 1usize..5, inp in 1usize..6, out in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lens = [rows * inp, inp * out, out];
        let mut theta = randn(&mut rng, lens.iter().sum(), 1.0);
        let r = randn(&mut rng, rows * out, 1.0);
        let p = split(&theta, &lens);
        let (mut dw, mut db) = (vec![0.0; lens[1]], vec![0.0; out]);
        let dx = linear_backward(p[0], rows, p[1], out, &r, &mut dw, &mut db);
        let analytic = [dx, dw, db].concat();
        let e = max_error(&mut theta, &analytic, |t| {
            let p = split(t, &lens);
            dot(&linear_forward(p[0], rows, p[1], p[2], out), &r)
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn conv1d(
        batch in 1usize..4, c_in in 1usize..4, c_out in 1usize..4,
        kernel in 1usize..5, stride in 1usize..4, extra in 0usize..9, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = ConvShape { kernel, c_in, c_out, stride };
        let t = kernel + extra;
        let t_out = shape.out_len(t).unwrap();
        let lens = [batch * t * c_in, kernel * c_in * c_out, c_out];
        let mut theta = randn(&mut rng, lens.iter().sum(), 1.0);
        let r = randn(&mut rng, batch * t_out * c_out, 1.0);
        let p = split(&theta, &lens);
        let (mut dk, mut db, mut dx) = (vec![0.0; lens[1]], vec![0.0; c_out], vec![0.0; lens[0]]);
        conv1d_backward(&shape, p[0], batch, t, p[1], &r, &mut dk, &mut db, Some(&mut dx)).unwrap();
        let analytic = [dx, dk, db].concat();
        let e = max_error(&mut theta, &analytic, |th| {
            let p = split(th, &lens);
            dot(&conv1d_forward(&shape, p[0], batch, t, p[1], p[2]).unwrap().0, &r)
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn batchnorm(rows in 2usize..9, c in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lens = [rows * c, c, c];
        let mut theta = randn(&mut rng, lens.iter().sum(), 1.0);
        let r = randn(&mut rng, rows * c, 1.0);
        let p = split(&theta, &lens);
        let (mut rm, mut rv) = (vec![0.0; c], vec![1.0; c]);
        let (_, cache) = batchnorm_train(p[0], c, p[1], p[2], &mut rm, &mut rv, 0.1, 1e-5);
        let (mut dg, mut db) = (vec![0.0; c], vec![0.0; c]);
        let dx = batchnorm_backward(&cache, &r, c, p[1], &mut dg, &mut db);
        let analytic = [dx, dg, db].concat();
        let e = max_error(&mut theta, &analytic, |th| {
            let p = split(th, &lens);
            let (mut rm, mut rv) = (vec![0.0; c], vec![1.0; c]);
            dot(&batchnorm_train(p[0], c, p[1], p[2], &mut rm, &mut rv, 0.1, 1e-5).0, &r)
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn gru(batch in 1usize..4, steps in 1usize..6, input in 1usize..5, hidden in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = GruDims { batch, steps, input, hidden };
        let lens = [batch * steps * input, input * 3 * hidden, hidden * 3 * hidden, 3 * hidden, hidden];
        let mut theta = randn(&mut rng, lens.iter().sum(), 0.8);
        let r = randn(&mut rng, batch * steps * hidden, 1.0);
        let params = |p: &[&'_ [f64]]| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
            (p[1].to_vec(), p[2].to_vec(), p[3].to_vec(), p[4].to_vec())
        };
        let p = split(&theta, &lens);
        let (w_ih, w_hh, b_ih, b_hn) = params(&p);
        let gp = GruParams { w_ih: &w_ih, w_hh: &w_hh, b_ih: &b_ih, b_hn: &b_hn };
        let cache = gru_forward(&dims, p[0], gp, None);
        let mut g = (vec![0.0; lens[1]], vec![0.0; lens[2]], vec![0.0; lens[3]], vec![0.0; lens[4]]);
        let dx = gru_backward(&dims, p[0], gp, &cache, &r, GruGrads { w_ih: &mut g.0, w_hh: &mut g.1, b_ih: &mut g.2, b_hn: &mut g.3 });
        let analytic = [dx, g.0, g.1, g.2, g.3].concat();
        let e = max_error(&mut theta, &analytic, |th| {
            let p = split(th, &lens);
            let gp = GruParams { w_ih: p[1], w_hh: p[2], b_ih: p[3], b_hn: p[4] };
            dot(&gru_forward(&dims, p[0], gp, None).h, &r)
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn attention_pool(batch in 1usize..4, steps in 1usize..6, d in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lens = [batch * steps * d, d * d, d, d, 1];
        let mut theta = randn(&mut rng, lens.iter().sum(), 1.0);
        let r = randn(&mut rng, batch * d, 1.0);
        let p = split(&theta, &lens);
        let pp = PoolParams { w: p[1], b: p[2], v: p[3], gate: p[4][0] };
        let (_, cache) = attention_pool_forward(p[0], batch, steps, d, pp);
        let (mut dw, mut db, mut dv, mut dgate) = (vec![0.0; d * d], vec![0.0; d], vec![0.0; d], 0.0);
        let dh = attention_pool_backward(p[0], batch, steps, d, pp, &cache, &r, PoolGrads { w: &mut dw, b: &mut db, v: &mut dv, gate: &mut dgate });
        let analytic = [dh, dw, db, dv, vec![dgate]].concat();
        let e = max_error(&mut theta, &analytic, |th| {
            let p = split(th, &lens);
            let pp = PoolParams { w: p[1], b: p[2], v: p[3], gate: p[4][0] };
            dot(&attention_pool_forward(p[0], batch, steps, d, pp).0, &r)
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn self_attention_fusion(batch in 1usize..3, a in 1usize..5, d in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lens = [batch * a * d, d * d, d * d, d * d, a * d * d, d];
        let mut theta = randn(&mut rng, lens.iter().sum(), 1.0);
        let r = randn(&mut rng, batch * d, 1.0);
        let p = split(&theta, &lens);
        let ap = AttentionParams { wq: p[1], wk: p[2], wv: p[3], reduce_w: p[4], reduce_b: p[5] };
        let fwd = fuse_attention(p[0], batch, a, d, ap);
        let mut g: Vec<Vec<f64>> = lens[1..].iter().map(|&n| vec![0.0; n]).collect();
        let [gq, gk, gv, gw, gb] = &mut g[..] else { unreachable!() };
        let dh = fuse_attention_backward(p[0], batch, a, d, ap, &fwd, &r, AttentionGrads { wq: gq, wk: gk, wv: gv, reduce_w: gw, reduce_b: gb });
        let analytic = [vec![dh], g].concat().concat();
        let e = max_error(&mut theta, &analytic, |th| {
            let p = split(th, &lens);
            let ap = AttentionParams { wq: p[1], wk: p[2], wv: p[3], reduce_w: p[4], reduce_b: p[5] };
            dot(&fuse_attention(p[0], batch, a, d, ap).out, &r)
        });
        prop_assert!(e < TOL, "{e}");
    }

    #[test]
    fn softmax_cross_entropy(rows in 1usize..5, n in 2usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = randn(&mut rng, rows * n, 3.0);
        let targets: Vec<usize> = (0..rows).map(|_| rng.random_range(0..n)).collect();
        let (_, grad) = cross_entropy_batch(&theta, n, &targets).unwrap();
        let e = max_error(&mut theta, &grad, |t| cross_entropy_batch(t, n, &targets).unwrap().0);
        prop_assert!(e < TOL, "{e}");
    }
}
