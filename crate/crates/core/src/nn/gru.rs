//! Batched single-layer GRU with backpropagation through time.
//!
//! Gates, with the reset applied to the recurrent candidate term:
//!
//! ```text
//! r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
//! z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
//! n_t = tanh(W_n x_t + r_t * (U_n h_{t-1} + b_hn) + b_in)
//! h_t = (1 - z_t) * n_t + z_t * h_{t-1}
//! ```
//!
//! `w_ih` is `[D_in x 3D]` and `w_hh` is `[D x 3D]`, columns ordered `r | z | n`.
//! `b_ih` holds `(b_r, b_z, b_in)`; `b_hn` is separate.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::linalg::{gemm, MatRef};
use super::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruDims {
    pub batch: usize,
    pub steps: usize,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Clone, Copy)]
pub struct GruParams<'a> {
    pub w_ih: &'a [f64],
    pub w_hh: &'a [f64],
    pub b_ih: &'a [f64],
    pub b_hn: &'a [f64],
}

pub struct GruGrads<'a> {
    pub w_ih: &'a mut [f64],
    pub w_hh: &'a mut [f64],
    pub b_ih: &'a mut [f64],
    pub b_hn: &'a mut [f64],
}

/// Values saved by the forward pass.
pub struct GruCache {
    /// Hidden states `[B x T x D]`.
    pub h: Vec<f64>,
    h0: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `U_n h_{t-1} + b_hn`.
    hn: Vec<f64>,
}

impl GruCache {
    pub fn hidden(&self) -> &[f64] {
        &self.h
    }
}

/// Runs the recurrence over `x [B x T x D_in]` from `h0 [D]` (zero if `None`).
pub fn gru_forward(dims: &GruDims, x: &[f64], p: GruParams<'_>, h0: Option<&[f64]>) -> GruCache {
    let GruDims {
        batch: bsz,
        steps: t_len,
        input: din,
        hidden: d,
    } = *dims;
    assert_eq!(x.len(), bsz * t_len * din, "GRU input shape");
    assert_eq!(p.w_ih.len(), din * 3 * d, "GRU w_ih shape");
    assert_eq!(p.w_hh.len(), d * 3 * d, "GRU w_hh shape");
    let d3 = 3 * d;
    let rows = bsz * t_len;

    let mut xp = Vec::with_capacity(rows * d3);
    for _ in 0..rows {
        xp.extend_from_slice(p.b_ih);
    }
    gemm(1.0, MatRef::new(x, rows, din), MatRef::new(p.w_ih, din, d3), 1.0, &mut xp, d3);

    let h0: Vec<f64> = match h0 {
        Some(h) => {
            assert_eq!(h.len(), d, "GRU h0 shape");
            (0..bsz).flat_map(|_| h.iter().copied()).collect()
        }
        None => vec![0.0; bsz * d],
    };
    let mut h = vec![0.0; rows * d];
    let mut r = vec![0.0; rows * d];
    let mut z = vec![0.0; rows * d];
    let mut n = vec![0.0; rows * d];
    let mut hn = vec![0.0; rows * d];
    let mut hp = vec![0.0; bsz * d3];
    let w_hh = MatRef::new(p.w_hh, d, d3);

    for t in 0..t_len {
        if t == 0 {
            gemm(1.0, MatRef::new(&h0, bsz, d), w_hh, 0.0, &mut hp, d3);
        } else {
            let prev = MatRef::strided(&h[(t - 1) * d..], bsz, d, t_len * d, 1);
            gemm(1.0, prev, w_hh, 0.0, &mut hp, d3);
        }
        for b in 0..bsz {
            let row = b * t_len + t;
            let xpr = &xp[row * d3..(row + 1) * d3];
            let hpr = &hp[b * d3..(b + 1) * d3];
            for j in 0..d {
                let hprev = if t == 0 {
                    h0[b * d + j]
                } else {
                    h[(row - 1) * d + j]
                };
                let rj = sigmoid(xpr[j] + hpr[j]);
                let zj = sigmoid(xpr[d + j] + hpr[d + j]);
                let hnj = hpr[2 * d + j] + p.b_hn[j];
                let nj = (xpr[2 * d + j] + rj * hnj).tanh();
                let k = row * d + j;
                r[k] = rj;
                z[k] = zj;
                hn[k] = hnj;
                n[k] = nj;
                h[k] = (1.0 - zj) * nj + zj * hprev;
            }
        }
    }
    GruCache {
        h,
        h0,
        r,
        z,
        n,
        hn,
    }
}

/// Backpropagates `dh [B x T x D]` (gradient of every emitted hidden state).
/// Accumulates parameter gradients and returns `dx [B x T x D_in]`.
pub fn gru_backward(
    dims: &GruDims,
    x: &[f64],
    p: GruParams<'_>,
    cache: &GruCache,
    dh_out: &[f64],
    g: GruGrads<'_>,
) -> Vec<f64> {
    let GruDims {
        batch: bsz,
        steps: t_len,
        input: din,
        hidden: d,
    } = *dims;
    let d3 = 3 * d;
    let rows = bsz * t_len;
    let mut dxp = vec![0.0; rows * d3];
    let mut dhp = vec![0.0; rows * d3];
    let mut dh_next = vec![0.0; bsz * d];
    let mut dhp_t = vec![0.0; bsz * d3];
    let w_hh = MatRef::new(p.w_hh, d, d3);

    for t in (0..t_len).rev() {
        for b in 0..bsz {
            let row = b * t_len + t;
            for j in 0..d {
                let k = row * d + j;
                let hprev = if t == 0 {
                    cache.h0[b * d + j]
                } else {
                    cache.h[k - d]
                };
                let dh = dh_out[k] + dh_next[b * d + j];
                let (rj, zj, nj, hnj) = (cache.r[k], cache.z[k], cache.n[k], cache.hn[k]);
                let dn = dh * (1.0 - zj);
                let dz = dh * (hprev - nj);
                let da_n = dn * (1.0 - nj * nj);
                let dr = da_n * hnj;
                let da_r = dr * rj * (1.0 - rj);
                let da_z = dz * zj * (1.0 - zj);
                let dhn = da_n * rj;
                dxp[row * d3 + j] = da_r;
                dxp[row * d3 + d + j] = da_z;
                dxp[row * d3 + 2 * d + j] = da_n;
                dhp_t[b * d3 + j] = da_r;
                dhp_t[b * d3 + d + j] = da_z;
                dhp_t[b * d3 + 2 * d + j] = dhn;
                g.b_hn[j] += dhn;
                dh_next[b * d + j] = dh * zj;
            }
            dhp[(b * t_len + t) * d3..(b * t_len + t + 1) * d3]
                .copy_from_slice(&dhp_t[b * d3..(b + 1) * d3]);
        }
        // dh_{t-1} += dHP * W_hh^T
        gemm(1.0, MatRef::new(&dhp_t, bsz, d3), w_hh.t(), 1.0, &mut dh_next, d);
    }

    // W_hh gradient in one product against the shifted hidden states.
    let mut hprev_all = vec![0.0; rows * d];
    for b in 0..bsz {
        for t in 0..t_len {
            let dst = &mut hprev_all[(b * t_len + t) * d..(b * t_len + t + 1) * d];
            if t == 0 {
                dst.copy_from_slice(&cache.h0[b * d..(b + 1) * d]);
            } else {
                dst.copy_from_slice(&cache.h[(b * t_len + t - 1) * d..(b * t_len + t) * d]);
            }
        }
    }
    gemm(
        1.0,
        MatRef::new(&hprev_all, rows, d).t(),
        MatRef::new(&dhp, rows, d3),
        1.0,
        g.w_hh,
        d3,
    );
    for row in dxp.chunks_exact(d3) {
        for (acc, v) in g.b_ih.iter_mut().zip(row) {
            *acc += v;
        }
    }
    gemm(
        1.0,
        MatRef::new(x, rows, din).t(),
        MatRef::new(&dxp, rows, d3),
        1.0,
        g.w_ih,
        d3,
    );
    let mut dx = vec![0.0; rows * din];
    gemm(
        1.0,
        MatRef::new(&dxp, rows, d3),
        MatRef::new(p.w_ih, din, d3).t(),
        0.0,
        &mut dx,
        din,
    );
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_params(din: usize, d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        (vec![0.0; din * 3 * d], vec![0.0; d * 3 * d], vec![0.0; 3 * d], vec![0.0; d])
    }

    #[test]
    fn zero_params_halve_the_state_each_step() {
        let dims = GruDims {
            batch: 1,
            steps: 5,
            input: 2,
            hidden: 3,
        };
        let (wi, wh, bi, bh) = zero_params(2, 3);
        let p = GruParams {
            w_ih: &wi,
            w_hh: &wh,
            b_ih: &bi,
            b_hn: &bh,
        };
        let x: Vec<f64> = (0..10).map(|v| v as f64 - 4.0).collect();
        let zero = gru_forward(&dims, &x, p, None);
        assert!(zero.h.iter().all(|&v| v == 0.0));

        let c = [1.0, -2.0, 0.5];
        let out = gru_forward(&dims, &x, p, Some(&c));
        for t in 0..5 {
            for j in 0..3 {
                let want = c[j] / 2f64.powi(t as i32 + 1);
                assert!((out.h[t * 3 + j] - want).abs() < 1e-15);
            }
        }
    }
}
