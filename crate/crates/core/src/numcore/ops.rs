//! Dense vector kernels shared by every model.

use rand::Rng;

use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `y += W x` for a row-major `W` of shape `(y.len(), x.len())`.
#[inline]
pub fn matvec_acc(w: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), cols * y.len());
    for (row, yi) in w.chunks_exact(cols).zip(y.iter_mut()) {
        let mut s = 0.0;
        for (a, b) in row.iter().zip(x) {
            s += a * b;
        }
        *yi += s;
    }
}

/// `x += W^T y` for a row-major `W` of shape `(y.len(), x.len())`.
#[inline]
pub fn matvec_t_acc(w: &[f64], y: &[f64], x: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), cols * y.len());
    for (row, &yi) in w.chunks_exact(cols).zip(y) {
        if yi == 0.0 {
            continue;
        }
        for (xj, a) in x.iter_mut().zip(row) {
            *xj += a * yi;
        }
    }
}

/// `G += y x^T` for a row-major `G` of shape `(y.len(), x.len())`.
#[inline]
pub fn outer_acc(g: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(g.len(), cols * y.len());
    for (row, &yi) in g.chunks_exact_mut(cols).zip(y) {
        if yi == 0.0 {
            continue;
        }
        for (gj, xj) in row.iter_mut().zip(x) {
            *gj += yi * xj;
        }
    }
}

/// Numerically stable softmax (max-subtracted). Entries equal to `-inf` get
/// probability exactly 0.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Config("softmax of an empty vector".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Config("softmax needs at least one finite logit".into()));
    }
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    Ok(out)
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            last_nonzero = i;
            acc += pi;
            if u < acc {
                return i;
            }
        }
    }
    // u landed in the rounding gap above the cumulative sum
    last_nonzero
}

/// Gradient of `-ln p[target]` with respect to the logits, scaled by `weight`:
/// `weight * (p - onehot(target))`, accumulated into `dlogits`.
pub fn nll_grad_acc(p: &[f64], target: usize, weight: f64, dlogits: &mut [f64]) {
    for (i, (d, &pi)) in dlogits.iter_mut().zip(p).enumerate() {
        let t = if i == target { 1.0 } else { 0.0 };
        *d += weight * (pi - t);
    }
}

/// Gradient of `-H(softmax(logits))` with respect to the logits, scaled by
/// `weight`: `weight * p_i (ln p_i + H)`, accumulated into `dlogits`.
pub fn neg_entropy_grad_acc(p: &[f64], weight: f64, dlogits: &mut [f64]) {
    let h = entropy(p);
    for (d, &pi) in dlogits.iter_mut().zip(p) {
        if pi > 0.0 {
            *d += weight * pi * (pi.ln() + h);
        }
    }
}
