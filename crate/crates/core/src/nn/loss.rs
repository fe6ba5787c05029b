use alloc::format;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};

/// Max-shifted softmax in place.
pub fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    softmax_in_place(&mut y);
    y
}

/// Backward of a row softmax given its output `p` and upstream `dp`.
pub fn softmax_backward(p: &[f64], dp: &[f64], dx: &mut [f64]) {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    for ((d, &pi), &gi) in dx.iter_mut().zip(p).zip(dp) {
        *d = pi * (gi - dot);
    }
}

/// `-ln softmax(logits)[target]`, computed through log-sum-exp.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::Precondition(format!(
            "target {target} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    Ok(lse - logits[target])
}

/// Mean cross-entropy over a `[B x N]` logit block; returns `(loss, dlogits)`.
pub fn cross_entropy_batch(logits: &[f64], n: usize, targets: &[usize]) -> Result<(f64, Vec<f64>)> {
    let b = targets.len();
    if logits.len() != b * n {
        return Err(Error::Shape("logits do not match batch x classes".into()));
    }
    let mut grad = Vec::with_capacity(logits.len());
    let mut total = 0.0;
    for (row, &t) in logits.chunks_exact(n).zip(targets) {
        total += cross_entropy(row, t)?;
        let mut p = softmax(row);
        p[t] -= 1.0;
        grad.extend(p.into_iter().map(|g| g / b as f64));
    }
    Ok((total / b as f64, grad))
}
