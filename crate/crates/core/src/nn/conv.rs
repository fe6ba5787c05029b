//! Valid (unpadded) strided 1-D convolution along time.
//!
//! Inputs are `[B x T x C_in]`, kernels `[K x C_in x C_out]`. Because a window
//! of `K` consecutive time rows is contiguous in a row-major `[T x C_in]`
//! buffer, the patch matrix is a strided view of the input and the forward is
//! a single gemm per batch item.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::linalg::{gemm, MatRef};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub kernel: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
}

impl ConvShape {
    /// `floor((T - K) / stride) + 1`.
    pub fn out_len(&self, t: usize) -> Result<usize> {
        if self.stride == 0 || self.kernel == 0 {
            return Err(Error::Shape("kernel and stride must be positive".into()));
        }
        if t < self.kernel {
            return Err(Error::Shape(format!(
                "sequence length {t} shorter than kernel {}",
                self.kernel
            )));
        }
        Ok((t - self.kernel) / self.stride + 1)
    }

    fn patch_view<'a>(&self, x: &'a [f64], t_out: usize) -> MatRef<'a> {
        MatRef::strided(
            x,
            t_out,
            self.kernel * self.c_in,
            self.stride * self.c_in,
            1,
        )
    }
}

/// Returns `(y, T*)` with `y` of shape `[B x T* x C_out]`.
pub fn conv1d_forward(
    shape: &ConvShape,
    x: &[f64],
    batch: usize,
    t: usize,
    kernel: &[f64],
    bias: &[f64],
) -> Result<(Vec<f64>, usize)> {
    check_shapes(shape, x, batch, t, kernel, bias)?;
    let t_out = shape.out_len(t)?;
    let co = shape.c_out;
    let mut y = vec![0.0; batch * t_out * co];
    let w = MatRef::new(kernel, shape.kernel * shape.c_in, co);
    for b in 0..batch {
        let xb = &x[b * t * shape.c_in..(b + 1) * t * shape.c_in];
        let yb = &mut y[b * t_out * co..(b + 1) * t_out * co];
        for row in yb.chunks_exact_mut(co) {
            row.copy_from_slice(bias);
        }
        gemm(1.0, shape.patch_view(xb, t_out), w, 1.0, yb, co);
    }
    Ok((y, t_out))
}

/// Accumulates kernel/bias gradients; writes the input gradient if requested.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    shape: &ConvShape,
    x: &[f64],
    batch: usize,
    t: usize,
    kernel: &[f64],
    dy: &[f64],
    dkernel: &mut [f64],
    dbias: &mut [f64],
    dx: Option<&mut [f64]>,
) -> Result<()> {
    let t_out = shape.out_len(t)?;
    let co = shape.c_out;
    let kc = shape.kernel * shape.c_in;
    for row in dy.chunks_exact(co) {
        for (db, g) in dbias.iter_mut().zip(row) {
            *db += g;
        }
    }
    for b in 0..batch {
        let xb = &x[b * t * shape.c_in..(b + 1) * t * shape.c_in];
        let dyb = MatRef::new(&dy[b * t_out * co..(b + 1) * t_out * co], t_out, co);
        gemm(1.0, shape.patch_view(xb, t_out).t(), dyb, 1.0, dkernel, co);
    }
    if let Some(dx) = dx {
        dx.iter_mut().for_each(|v| *v = 0.0);
        let w = MatRef::new(kernel, kc, co);
        let mut dpatch = vec![0.0; t_out * kc];
        for b in 0..batch {
            let dyb = MatRef::new(&dy[b * t_out * co..(b + 1) * t_out * co], t_out, co);
            gemm(1.0, dyb, w.t(), 0.0, &mut dpatch, kc);
            let dxb = &mut dx[b * t * shape.c_in..(b + 1) * t * shape.c_in];
            for (i, prow) in dpatch.chunks_exact(kc).enumerate() {
                let off = i * shape.stride * shape.c_in;
                for (d, p) in dxb[off..off + kc].iter_mut().zip(prow) {
                    *d += p;
                }
            }
        }
    }
    Ok(())
}

fn check_shapes(
    shape: &ConvShape,
    x: &[f64],
    batch: usize,
    t: usize,
    kernel: &[f64],
    bias: &[f64],
) -> Result<()> {
    if x.len() != batch * t * shape.c_in {
        return Err(Error::Shape(format!(
            "conv input has {} values, expected {}x{}x{}",
            x.len(),
            batch,
            t,
            shape.c_in
        )));
    }
    if kernel.len() != shape.kernel * shape.c_in * shape.c_out || bias.len() != shape.c_out {
        return Err(Error::Shape("conv kernel/bias size mismatch".into()));
    }
    Ok(())
}

/// Single-sequence convenience form: `x [T x C_in]`, `kernel [K x C_in x C_out]`.
pub fn conv1d(x: &Tensor, kernel: &Tensor, bias: &[f64], stride: usize) -> Result<Tensor> {
    let (&[t, c_in], &[k, kc_in, c_out]) = (x.shape(), kernel.shape()) else {
        return Err(Error::Shape("conv1d expects [T x C] input and [K x C_in x C_out] kernel".into()));
    };
    if kc_in != c_in {
        return Err(Error::Shape(format!("kernel expects {kc_in} channels, input has {c_in}")));
    }
    let shape = ConvShape {
        kernel: k,
        c_in,
        c_out,
        stride,
    };
    let (y, t_out) = conv1d_forward(&shape, x.data(), 1, t, kernel.data(), bias)?;
    Tensor::new(vec![t_out, c_out], y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::new(vec![4, 1], vec![1.0, -2.0, 3.5, 0.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let y = conv1d(&x, &k, &[0.0], 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn hand_convolution() {
        let x = Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::new(vec![2, 1, 1], vec![1.0, 1.0]).unwrap();
        let y = conv1d(&x, &k, &[0.0], 2).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn output_length_formula() {
        let s = ConvShape {
            kernel: 3,
            c_in: 1,
            c_out: 1,
            stride: 2,
        };
        assert_eq!(s.out_len(5).unwrap(), 2);
        assert!(matches!(s.out_len(2), Err(Error::Shape(_))));
    }
}
