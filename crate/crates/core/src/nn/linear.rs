use alloc::vec::Vec;

use super::linalg::{gemm, MatRef};

/// `y = x W + b` for `x [rows x in]`, `W [in x out]`.
pub fn linear_forward(x: &[f64], rows: usize, w: &[f64], b: &[f64], out: usize) -> Vec<f64> {
    let inp = w.len() / out;
    let mut y = Vec::with_capacity(rows * out);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    gemm(1.0, MatRef::new(x, rows, inp), MatRef::new(w, inp, out), 1.0, &mut y, out);
    y
}

/// Accumulates `dW`, `db`; returns `dx`.
pub fn linear_backward(
    x: &[f64],
    rows: usize,
    w: &[f64],
    out: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let inp = w.len() / out;
    for row in dy.chunks_exact(out) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    gemm(1.0, MatRef::new(x, rows, inp).t(), MatRef::new(dy, rows, out), 1.0, dw, out);
    let mut dx = alloc::vec![0.0; rows * inp];
    gemm(1.0, MatRef::new(dy, rows, out), MatRef::new(w, inp, out).t(), 0.0, &mut dx, inp);
    dx
}
