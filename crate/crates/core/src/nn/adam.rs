#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update of every parameter; gradients are zeroed afterwards.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) {
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (values, grads, ms, vs) = store.parts_mut();
    for (((p, g), m), v) in values.iter_mut().zip(grads.iter_mut()).zip(ms).zip(vs) {
        let p = p.data_mut();
        let g = g.data_mut();
        let m = m.data_mut();
        let v = v.data_mut();
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            g[i] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use alloc::vec;

    fn store_with(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Tensor::from_vec(values.to_vec()));
        s
    }

    fn set_grad(s: &mut ParamStore, g: &[f64]) {
        let id = s.ids().next().unwrap();
        let (_, mut grads) = s.split();
        grads.get(id).copy_from_slice(g);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = store_with(&[1.0, 1.0, 1.0]);
        set_grad(&mut s, &[3.0, -0.5, 100.0]);
        let cfg = AdamConfig::default();
        adam_step(&mut s, &cfg);
        let p = s.flat_values();
        for (pi, g) in p.iter().zip([3.0f64, -0.5, 100.0]) {
            let expected = 1.0 - cfg.lr * g / (g.abs() + cfg.eps);
            assert!((pi - expected).abs() < 1e-15);
            assert!(((1.0 - pi) - cfg.lr * g.signum()).abs() < 1e-11);
        }
        assert!(s.flat_grads().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store_with(&[0.25, -4.0]);
        adam_step(&mut s, &AdamConfig::default());
        assert_eq!(s.flat_values(), vec![0.25, -4.0]);
    }

    #[test]
    fn constant_gradient_keeps_step_size_near_lr() {
        // m_hat = g and v_hat = g^2 for every step when g is constant.
        let mut s = store_with(&[0.0]);
        let cfg = AdamConfig::default();
        let mut prev = 0.0;
        for _ in 0..2 {
            set_grad(&mut s, &[0.7]);
            adam_step(&mut s, &cfg);
            let p = s.flat_values()[0];
            assert!(((prev - p) - cfg.lr * 0.7 / (0.7 + cfg.eps)).abs() < 1e-15);
            assert!(((prev - p) - cfg.lr).abs() < 1e-11);
            prev = p;
        }
    }
}
