//! Batch normalisation over the feature axis of `[rows x C]` activations
//! (rows = batch x time).

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

pub struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

/// Training mode: normalises with batch statistics and updates the running
/// mean and (unbiased) running variance.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_train(
    x: &[f64],
    c: usize,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &mut [f64],
    running_var: &mut [f64],
    momentum: f64,
    eps: f64,
) -> (Vec<f64>, BnCache) {
    let rows = x.len() / c;
    let mut mean = vec![0.0; c];
    for row in x.chunks_exact(c) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; c];
    for row in x.chunks_exact(c) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= rows as f64);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for ((xr, hr), yr) in x
        .chunks_exact(c)
        .zip(xhat.chunks_exact_mut(c))
        .zip(y.chunks_exact_mut(c))
    {
        for j in 0..c {
            let h = (xr[j] - mean[j]) * inv_std[j];
            hr[j] = h;
            yr[j] = gamma[j] * h + beta[j];
        }
    }
    let unbias = if rows > 1 {
        rows as f64 / (rows - 1) as f64
    } else {
        1.0
    };
    for j in 0..c {
        running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mean[j];
        running_var[j] = (1.0 - momentum) * running_var[j] + momentum * var[j] * unbias;
    }
    (y, BnCache { xhat, inv_std })
}

/// Inference mode: `gamma * (x - mu) / sqrt(var + eps) + beta` with running stats.
pub fn batchnorm_eval(
    x: &mut [f64],
    c: usize,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) {
    let scale: Vec<f64> = gamma
        .iter()
        .zip(running_var)
        .map(|(g, v)| g / (v + eps).sqrt())
        .collect();
    for row in x.chunks_exact_mut(c) {
        for j in 0..c {
            row[j] = (row[j] - running_mean[j]) * scale[j] + beta[j];
        }
    }
}

/// Backward of the training-mode transform.
pub fn batchnorm_backward(
    cache: &BnCache,
    dy: &[f64],
    c: usize,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let rows = dy.len() / c;
    let n = rows as f64;
    let mut sum_dxhat = vec![0.0; c];
    let mut sum_dxhat_xhat = vec![0.0; c];
    for (dr, hr) in dy.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for j in 0..c {
            dbeta[j] += dr[j];
            dgamma[j] += dr[j] * hr[j];
            let dh = dr[j] * gamma[j];
            sum_dxhat[j] += dh;
            sum_dxhat_xhat[j] += dh * hr[j];
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for ((xr, dr), hr) in dx
        .chunks_exact_mut(c)
        .zip(dy.chunks_exact(c))
        .zip(cache.xhat.chunks_exact(c))
    {
        for j in 0..c {
            let dh = dr[j] * gamma[j];
            xr[j] = cache.inv_std[j] / n * (n * dh - sum_dxhat[j] - hr[j] * sum_dxhat_xhat[j]);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_on_standardised_input_is_near_identity() {
        // Two channels, four rows, each channel mean 0 and population variance 1.
        let x = [1.0, -1.0, -1.0, 1.0, 1.0, 1.0, -1.0, -1.0];
        let mut rm = [0.0; 2];
        let mut rv = [1.0; 2];
        let (y, _) = batchnorm_train(&x, 2, &[1.0; 2], &[0.0; 2], &mut rm, &mut rv, BN_MOMENTUM, BN_EPS);
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).abs() < 1e-5);
        }
        assert_eq!(rm, [0.0, 0.0]);
        // unbiased variance 4/3 blended with momentum 0.1
        assert!((rv[0] - (0.9 + 0.1 * 4.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_closed_form() {
        let mut x = [3.0];
        batchnorm_eval(&mut x, 1, &[2.0], &[1.0], &[0.0], &[1.0], BN_EPS);
        let want = 2.0 * 3.0 / (1.0f64 + BN_EPS).sqrt() + 1.0;
        assert!((x[0] - want).abs() < 1e-15);
        assert!((x[0] - 7.0).abs() < 1e-4);
    }
}
