//! Gated temporal attention pooling.
//!
//! `s_t = w . tanh(W H_t + b)`, `alpha = softmax_t(s)`,
//! `out = H_T + gate * sum_t alpha_t H_t`.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::linalg::{gemm, MatRef};
use super::loss::{softmax_backward, softmax_in_place};

#[derive(Clone, Copy)]
pub struct PoolParams<'a> {
    /// `[D x D]`
    pub w: &'a [f64],
    pub b: &'a [f64],
    /// Score vector `[D]`.
    pub v: &'a [f64],
    pub gate: f64,
}

pub struct PoolGrads<'a> {
    pub w: &'a mut [f64],
    pub b: &'a mut [f64],
    pub v: &'a mut [f64],
    pub gate: &'a mut f64,
}

pub struct PoolCache {
    u: Vec<f64>,
    pub alpha: Vec<f64>,
    pub context: Vec<f64>,
}

/// `h [B x T x D]` to `[B x D]`.
pub fn attention_pool_forward(
    h: &[f64],
    batch: usize,
    steps: usize,
    d: usize,
    p: PoolParams<'_>,
) -> (Vec<f64>, PoolCache) {
    assert!(steps >= 1, "attention pooling needs at least one step");
    assert_eq!(h.len(), batch * steps * d);
    let rows = batch * steps;
    let mut u = Vec::with_capacity(rows * d);
    for _ in 0..rows {
        u.extend_from_slice(p.b);
    }
    gemm(1.0, MatRef::new(h, rows, d), MatRef::new(p.w, d, d), 1.0, &mut u, d);
    u.iter_mut().for_each(|x| *x = x.tanh());

    let mut alpha = vec![0.0; rows];
    for (a, ur) in alpha.iter_mut().zip(u.chunks_exact(d)) {
        *a = ur.iter().zip(p.v).map(|(x, y)| x * y).sum();
    }
    for ab in alpha.chunks_exact_mut(steps) {
        softmax_in_place(ab);
    }
    let mut context = vec![0.0; batch * d];
    let mut out = vec![0.0; batch * d];
    for b in 0..batch {
        let ctx = &mut context[b * d..(b + 1) * d];
        for t in 0..steps {
            let a = alpha[b * steps + t];
            let hr = &h[(b * steps + t) * d..(b * steps + t + 1) * d];
            for (c, x) in ctx.iter_mut().zip(hr) {
                *c += a * x;
            }
        }
        let last = &h[(b * steps + steps - 1) * d..(b * steps + steps) * d];
        let o = &mut out[b * d..(b + 1) * d];
        o.copy_from_slice(last);
        if p.gate != 0.0 {
            for (o, c) in o.iter_mut().zip(ctx.iter()) {
                *o += p.gate * c;
            }
        }
    }
    (out, PoolCache { u, alpha, context })
}

/// Returns `dh [B x T x D]`.
pub fn attention_pool_backward(
    h: &[f64],
    batch: usize,
    steps: usize,
    d: usize,
    p: PoolParams<'_>,
    cache: &PoolCache,
    dout: &[f64],
    g: PoolGrads<'_>,
) -> Vec<f64> {
    let rows = batch * steps;
    let mut dh = vec![0.0; rows * d];
    let mut ds = vec![0.0; rows];
    let mut dalpha = vec![0.0; steps];
    for b in 0..batch {
        let dob = &dout[b * d..(b + 1) * d];
        let ctx = &cache.context[b * d..(b + 1) * d];
        *g.gate += dob.iter().zip(ctx).map(|(x, y)| x * y).sum::<f64>();
        let last = (b * steps + steps - 1) * d;
        for (x, y) in dh[last..last + d].iter_mut().zip(dob) {
            *x += y;
        }
        for t in 0..steps {
            let row = b * steps + t;
            let a = cache.alpha[row];
            let hr = &h[row * d..(row + 1) * d];
            let mut da = 0.0;
            for j in 0..d {
                let dc = p.gate * dob[j];
                dh[row * d + j] += a * dc;
                da += dc * hr[j];
            }
            dalpha[t] = da;
        }
        softmax_backward(
            &cache.alpha[b * steps..(b + 1) * steps],
            &dalpha,
            &mut ds[b * steps..(b + 1) * steps],
        );
    }
    // Through the score MLP.
    let mut dpre = vec![0.0; rows * d];
    for row in 0..rows {
        let ur = &cache.u[row * d..(row + 1) * d];
        let s = ds[row];
        if s == 0.0 {
            continue;
        }
        for j in 0..d {
            g.v[j] += s * ur[j];
            dpre[row * d + j] = s * p.v[j] * (1.0 - ur[j] * ur[j]);
        }
    }
    for r in dpre.chunks_exact(d) {
        for (acc, x) in g.b.iter_mut().zip(r) {
            *acc += x;
        }
    }
    gemm(1.0, MatRef::new(h, rows, d).t(), MatRef::new(&dpre, rows, d), 1.0, g.w, d);
    gemm(1.0, MatRef::new(&dpre, rows, d), MatRef::new(p.w, d, d).t(), 1.0, &mut dh, d);
    dh
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params<'a>(w: &'a [f64], b: &'a [f64], v: &'a [f64], gate: f64) -> PoolParams<'a> {
        PoolParams { w, b, v, gate }
    }

    #[test]
    fn zero_gate_returns_last_state_exactly() {
        let h: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin() - 0.3).collect();
        let w: Vec<f64> = (0..4).map(|i| i as f64 * 0.1).collect();
        let (out, _) = attention_pool_forward(&h, 2, 3, 2, params(&w, &[0.1, 0.2], &[1.0, -1.0], 0.0));
        assert_eq!(&out[0..2], &h[4..6]);
        assert_eq!(&out[2..4], &h[10..12]);
    }

    #[test]
    fn single_step_scales_by_one_plus_gate() {
        let h = [0.5, -2.0];
        let w = [0.3, 0.1, -0.2, 0.4];
        let (out, cache) = attention_pool_forward(&h, 1, 1, 2, params(&w, &[0.0; 2], &[1.0, 1.0], 0.25));
        assert_eq!(cache.alpha, vec![1.0]);
        assert!((out[0] - 1.25 * 0.5).abs() < 1e-15);
        assert!((out[1] - 1.25 * -2.0).abs() < 1e-15);
    }

    #[test]
    fn identical_states_give_that_state_as_context() {
        let h = [0.7, -0.1, 0.7, -0.1, 0.7, -0.1];
        let w = [1.0, 2.0, -3.0, 0.5];
        let (_, cache) = attention_pool_forward(&h, 1, 3, 2, params(&w, &[0.3, -0.3], &[2.0, 0.1], 1.0));
        assert!((cache.context[0] - 0.7).abs() < 1e-15);
        assert!((cache.context[1] + 0.1).abs() < 1e-15);
    }
}
