//! Late-fusion primitives: per-pair class probabilities, log-likelihood
//! ratios, their sum, and scaled dot-product self-attention across pairs.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::nn::linalg::{gemm, MatRef};
use crate::nn::linear::{linear_backward, linear_forward};
use crate::nn::loss::{softmax_backward, softmax_in_place};

/// Clamps each probability to `[eps, 1 - eps]` and renormalises to sum 1.
pub fn clamp_renormalize(p: &[f64], eps: f64) -> Vec<f64> {
    let mut c: Vec<f64> = p.iter().map(|&v| v.clamp(eps, 1.0 - eps)).collect();
    let s: f64 = c.iter().sum();
    c.iter_mut().for_each(|v| *v /= s);
    c
}

/// Linear head `D -> N`, softmax, clamp and renormalise.
pub fn per_pair_class_probs(h: &[f64], w: &[f64], b: &[f64], eps: f64) -> Vec<f64> {
    let mut logits = linear_forward(h, 1, w, b, b.len());
    softmax_in_place(&mut logits);
    clamp_renormalize(&logits, eps)
}

/// `LLR_i = ln(p_i / sum_{j != i} p_j)`, evaluated as `ln p_i - ln(1 - p_i)`
/// for normalised `p`.
pub fn llr_per_pair(probs: &[f64]) -> Vec<f64> {
    probs.iter().map(|&p| p.ln() - (-p).ln_1p()).collect()
}

/// Correctly rounded sum (Shewchuk's exact partials, rounded once at the
/// end). The result depends only on the multiset of inputs, never on order.
pub fn exact_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in xs {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                core::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    let Some(mut n) = partials.len().checked_sub(1) else {
        return 0.0;
    };
    let mut hi = partials[n];
    if !hi.is_finite() {
        return partials.iter().sum();
    }
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    // Half-way case: the discarded tail decides the rounding direction.
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Elementwise sum of per-pair LLR rows, correctly rounded per class so the
/// result is independent of pair order.
pub fn fuse_llr<R: AsRef<[f64]>>(per_pair: &[R]) -> Vec<f64> {
    let n = per_pair.first().map_or(0, |r| r.as_ref().len());
    (0..n).map(|i| exact_sum(per_pair.iter().map(|r| r.as_ref()[i]))).collect()
}

/// Forward values of the LLR head for one `[B x N]` block of head logits.
pub(crate) struct LlrHeadCache {
    pub probs: Vec<f64>,
    pub renorm: Vec<f64>,
    sums: Vec<f64>,
}

pub(crate) fn llr_head_forward(logits: &[f64], n: usize, eps: f64) -> (Vec<f64>, LlrHeadCache) {
    let mut probs = logits.to_vec();
    let mut renorm = Vec::with_capacity(logits.len());
    let mut sums = Vec::with_capacity(logits.len() / n);
    let mut llr = Vec::with_capacity(logits.len());
    for row in probs.chunks_exact_mut(n) {
        softmax_in_place(row);
        let s: f64 = row.iter().map(|v| v.clamp(eps, 1.0 - eps)).sum();
        sums.push(s);
        let q = clamp_renormalize(row, eps);
        llr.extend(llr_per_pair(&q));
        renorm.extend(q);
    }
    (
        llr,
        LlrHeadCache {
            probs,
            renorm,
            sums,
        },
    )
}

/// Gradient w.r.t. the head logits given `dllr`.
pub(crate) fn llr_head_backward(cache: &LlrHeadCache, dllr: &[f64], n: usize, eps: f64) -> Vec<f64> {
    let mut dlogits = vec![0.0; dllr.len()];
    let mut dq = vec![0.0; n];
    let mut dp = vec![0.0; n];
    for (r, dl_row) in dllr.chunks_exact(n).enumerate() {
        let q = &cache.renorm[r * n..(r + 1) * n];
        let p = &cache.probs[r * n..(r + 1) * n];
        for i in 0..n {
            dq[i] = dl_row[i] / (q[i] * (1.0 - q[i]));
        }
        // q = c / sum(c)
        let dot: f64 = dq.iter().zip(q).map(|(a, b)| a * b).sum();
        let s = cache.sums[r];
        for i in 0..n {
            let inside = p[i] > eps && p[i] < 1.0 - eps;
            dp[i] = if inside { (dq[i] - dot) / s } else { 0.0 };
        }
        softmax_backward(p, &dp, &mut dlogits[r * n..(r + 1) * n]);
    }
    dlogits
}

#[derive(Clone, Copy)]
pub struct AttentionParams<'a> {
    /// `[D x D]` projections.
    pub wq: &'a [f64],
    pub wk: &'a [f64],
    pub wv: &'a [f64],
    /// `[A*D x D]` reduction over the flattened modality axis.
    pub reduce_w: &'a [f64],
    pub reduce_b: &'a [f64],
}

pub struct AttentionGrads<'a> {
    pub wq: &'a mut [f64],
    pub wk: &'a mut [f64],
    pub wv: &'a mut [f64],
    pub reduce_w: &'a mut [f64],
    pub reduce_b: &'a mut [f64],
}

/// Forward values of self-attention fusion for a batch.
pub struct AttentionForward {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Row-softmaxed weights `[B x A x A]`.
    pub attn: Vec<f64>,
    o: Vec<f64>,
    /// Fused features `[B x D]`.
    pub out: Vec<f64>,
}

/// Self-attention over `h [B x A x D]` (one row per modality pair), then a
/// linear map of the flattened `[A*D]` result to `[D]`. No nonlinearity.
pub fn fuse_attention(h: &[f64], batch: usize, a: usize, d: usize, p: AttentionParams<'_>) -> AttentionForward {
    assert_eq!(h.len(), batch * a * d);
    let rows = batch * a;
    let proj = |w: &[f64]| {
        let mut out = vec![0.0; rows * d];
        gemm(1.0, MatRef::new(h, rows, d), MatRef::new(w, d, d), 0.0, &mut out, d);
        out
    };
    let q = proj(p.wq);
    let k = proj(p.wk);
    let v = proj(p.wv);
    let scale = 1.0 / (d as f64).sqrt();
    let mut attn = vec![0.0; batch * a * a];
    let mut o = vec![0.0; rows * d];
    for b in 0..batch {
        let qb = MatRef::new(&q[b * a * d..(b + 1) * a * d], a, d);
        let kb = MatRef::new(&k[b * a * d..(b + 1) * a * d], a, d);
        let vb = MatRef::new(&v[b * a * d..(b + 1) * a * d], a, d);
        let sb = &mut attn[b * a * a..(b + 1) * a * a];
        gemm(scale, qb, kb.t(), 0.0, sb, a);
        for row in sb.chunks_exact_mut(a) {
            softmax_in_place(row);
        }
        gemm(
            1.0,
            MatRef::new(sb, a, a),
            vb,
            0.0,
            &mut o[b * a * d..(b + 1) * a * d],
            d,
        );
    }
    let out = linear_forward(&o, batch, p.reduce_w, p.reduce_b, d);
    AttentionForward {
        q,
        k,
        v,
        attn,
        o,
        out,
    }
}

/// Returns `dh [B x A x D]`.
pub fn fuse_attention_backward(
    h: &[f64],
    batch: usize,
    a: usize,
    d: usize,
    p: AttentionParams<'_>,
    fwd: &AttentionForward,
    dout: &[f64],
    g: AttentionGrads<'_>,
) -> Vec<f64> {
    let rows = batch * a;
    let d_o = linear_backward(&fwd.o, batch, p.reduce_w, d, dout, g.reduce_w, g.reduce_b);
    let scale = 1.0 / (d as f64).sqrt();
    let mut dq = vec![0.0; rows * d];
    let mut dk = vec![0.0; rows * d];
    let mut dv = vec![0.0; rows * d];
    let mut datt = vec![0.0; a * a];
    let mut ds = vec![0.0; a * a];
    for b in 0..batch {
        let span = b * a * d..(b + 1) * a * d;
        let att = &fwd.attn[b * a * a..(b + 1) * a * a];
        let dob = MatRef::new(&d_o[span.clone()], a, d);
        // O = A V
        gemm(1.0, dob, MatRef::new(&fwd.v[span.clone()], a, d).t(), 0.0, &mut datt, a);
        gemm(1.0, MatRef::new(att, a, a).t(), dob, 0.0, &mut dv[span.clone()], d);
        for i in 0..a {
            softmax_backward(
                &att[i * a..(i + 1) * a],
                &datt[i * a..(i + 1) * a],
                &mut ds[i * a..(i + 1) * a],
            );
        }
        // S = scale * Q K^T
        let dsm = MatRef::new(&ds, a, a);
        gemm(scale, dsm, MatRef::new(&fwd.k[span.clone()], a, d), 0.0, &mut dq[span.clone()], d);
        gemm(scale, dsm.t(), MatRef::new(&fwd.q[span.clone()], a, d), 0.0, &mut dk[span.clone()], d);
    }
    let hm = MatRef::new(h, rows, d);
    let mut dh = vec![0.0; rows * d];
    for (w, gw, dpart) in [(p.wq, g.wq, &dq), (p.wk, g.wk, &dk), (p.wv, g.wv, &dv)] {
        gemm(1.0, hm.t(), MatRef::new(dpart, rows, d), 1.0, gw, d);
        gemm(1.0, MatRef::new(dpart, rows, d), MatRef::new(w, d, d).t(), 1.0, &mut dh, d);
    }
    dh
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn llr_two_class_values() {
        let l = llr_per_pair(&[0.8, 0.2]);
        assert!((l[0] - 4f64.ln()).abs() < 1e-15);
        assert!((l[1] + 4f64.ln()).abs() < 1e-15);
        assert!((l[0] - 1.3863).abs() < 1e-4);
        assert_eq!(llr_per_pair(&[0.5, 0.5]), vec![0.0, 0.0]);
    }

    #[test]
    fn llr_uniform_twenty_classes() {
        let l = llr_per_pair(&[1.0 / 20.0; 20]);
        for v in l {
            assert!((v + 19f64.ln()).abs() < 1e-12);
        }
        assert!((19f64.ln() - 2.9444).abs() < 1e-4);
    }

    #[test]
    fn fuse_sums_pairs() {
        let one = vec![0.1, -0.2, 0.3];
        assert_eq!(fuse_llr(std::slice::from_ref(&one)), one);
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum([]), 0.0);
        assert_eq!(exact_sum([1.0, 1e-16, 1e-16]), 1.0 + 2.220446049250313e-16);
        let two = fuse_llr(&[one.clone(), one.clone()]);
        for (t, o) in two.iter().zip(&one) {
            assert_eq!(*t, 2.0 * o);
        }
        let uniform = llr_per_pair(&[0.05; 20]);
        let eight = fuse_llr(&vec![uniform; 8]);
        for v in eight {
            assert!((v + 8.0 * 19f64.ln()).abs() < 1e-11);
        }
    }

    #[test]
    fn zero_head_is_uniform_and_clamp_bounds_extremes() {
        let p = per_pair_class_probs(&[0.3, -1.0], &[0.0; 40], &[0.0; 20], 1e-7);
        for v in &p {
            assert!((v - 0.05).abs() < 1e-15);
        }
        let mut logits = vec![0.0; 20];
        logits[3] = 1e4;
        let q = per_pair_class_probs(&[1.0], &[0.0; 20], &logits, 1e-7);
        assert!(q[3] <= 1.0 - 1e-7);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(llr_per_pair(&q).iter().all(|v| v.is_finite()));
    }

    #[allow(clippy::type_complexity)]
    fn attention_params(d: usize, a: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let f = |n: usize, s: f64| (0..n).map(|i| ((i as f64 + s) * 0.731).sin() * 0.5).collect::<Vec<_>>();
        (f(d * d, 0.0), f(d * d, 1.0), f(d * d, 2.0), f(a * d * d, 3.0), f(d, 4.0))
    }

    #[test]
    fn identical_rows_attend_uniformly() {
        let (a, d) = (3, 4);
        let (wq, wk, wv, rw, rb) = attention_params(d, a);
        let p = AttentionParams {
            wq: &wq,
            wk: &wk,
            wv: &wv,
            reduce_w: &rw,
            reduce_b: &rb,
        };
        let row = [0.2, -0.7, 1.1, 0.05];
        let h: Vec<f64> = (0..a).flat_map(|_| row).collect();
        let f = fuse_attention(&h, 1, a, d, p);
        for w in &f.attn {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        for i in 1..a {
            assert_eq!(f.o[i * d..(i + 1) * d], f.o[0..d]);
        }
    }

    #[test]
    fn single_pair_attention_returns_values() {
        let d = 3;
        let (wq, wk, wv, rw, rb) = attention_params(d, 1);
        let p = AttentionParams {
            wq: &wq,
            wk: &wk,
            wv: &wv,
            reduce_w: &rw,
            reduce_b: &rb,
        };
        let h = [0.4, -0.3, 0.9];
        let f = fuse_attention(&h, 1, 1, d, p);
        assert_eq!(f.attn, vec![1.0]);
        assert_eq!(f.o, f.v);
    }
}
