//! Differentiable building blocks with hand-written backward passes.
//!
//! Activations are batch-major, row-major `f64` buffers. Every layer exposes a
//! forward that returns the values it needs for backward, and a backward that
//! accumulates parameter gradients and returns the input gradient.

pub mod adam;
pub mod attention_pool;
pub mod batchnorm;
pub mod conv;
pub mod gradcheck;
pub mod gru;
pub mod init;
pub mod linalg;
pub mod linear;
pub mod loss;
pub mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use params::{Grads, ParamId, ParamStore, Values};
pub use tensor::Tensor;

#[inline]
pub fn relu(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeros `dy` where the forward input was non-positive.
#[inline]
pub fn relu_backward(pre: &[f64], dy: &mut [f64]) {
    for (d, &z) in dy.iter_mut().zip(pre) {
        if z <= 0.0 {
            *d = 0.0;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    #[cfg(not(feature = "std"))]
    use num_traits::Float;
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let mut x = [-1.0, 0.0, 2.0];
        relu(&mut x);
        assert_eq!(x, [0.0, 0.0, 2.0]);
    }
}
