//! Exact information measures over small discrete distributions, plus BLEU.

use std::collections::HashMap;
use std::hash::Hash;

use rand::Rng;

use crate::error::{Error, Result};

/// `KL(p || q)` in nats with `0 ln 0 = 0`; `+inf` when `q_i = 0 < p_i`.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Protocol(format!(
            "kl over distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Ok(f64::INFINITY);
            }
            acc += pi * (pi / qi).ln();
        }
    }
    // rounding can leave tiny negative sums for p ~= q
    Ok(acc.max(0.0))
}

/// Per-word information gain of a message: `r_k = KL(prefixes[k+1] || prefixes[k])`.
pub fn per_word_mi(prefixes: &[Vec<f64>]) -> Result<Vec<f64>> {
    prefixes.windows(2).map(|w| kl(&w[1], &w[0])).collect()
}

/// Normalized joint `p(m, a, t)` over finite supports, stored row-major in
/// `(m, a, t)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    dims: [usize; 3],
    p: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    /// `H(M | A, T)`
    pub lhs: f64,
    /// `H(M | T)`
    pub ent: f64,
    /// `MI(M; A | T)`
    pub mi: f64,
    pub residual: f64,
}

impl JointTable {
    pub fn new(dims: [usize; 3], p: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) || p.len() != dims.iter().product::<usize>() {
            return Err(Error::Config("joint table shape mismatch".into()));
        }
        if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Config("joint table entries must be finite and non-negative".into()));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("joint table mass {total} != 1")));
        }
        Ok(Self { dims, p })
    }

    /// Random joint with uniform-then-normalized entries; roughly a quarter of
    /// the cells are zeroed so sparse supports are exercised.
    pub fn random<R: Rng + ?Sized>(dims: [usize; 3], rng: &mut R) -> Self {
        let n: usize = dims.iter().product();
        let mut p: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.25) { 0.0 } else { rng.gen::<f64>() })
            .collect();
        if p.iter().all(|&x| x == 0.0) {
            p[0] = 1.0;
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        Self { dims, p }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn get(&self, m: usize, a: usize, t: usize) -> f64 {
        let [_, na, nt] = self.dims;
        self.p[(m * na + a) * nt + t]
    }

    /// Both sides of `H(M|A,T) = H(M|T) - MI(M;A|T)`, each by direct summation.
    pub fn decomposition_check(&self) -> Decomposition {
        let [nm, na, nt] = self.dims;
        let mut p_t = vec![0.0; nt];
        let mut p_at = vec![0.0; na * nt];
        let mut p_mt = vec![0.0; nm * nt];
        for m in 0..nm {
            for a in 0..na {
                for t in 0..nt {
                    let x = self.get(m, a, t);
                    p_t[t] += x;
                    p_at[a * nt + t] += x;
                    p_mt[m * nt + t] += x;
                }
            }
        }
        let mut lhs = 0.0;
        let mut mi = 0.0;
        for m in 0..nm {
            for a in 0..na {
                for t in 0..nt {
                    let x = self.get(m, a, t);
                    if x > 0.0 {
                        lhs -= x * (x / p_at[a * nt + t]).ln();
                        mi += x * (x * p_t[t] / (p_mt[m * nt + t] * p_at[a * nt + t])).ln();
                    }
                }
            }
        }
        let mut ent = 0.0;
        for m in 0..nm {
            for t in 0..nt {
                let x = p_mt[m * nt + t];
                if x > 0.0 {
                    ent -= x * (x / p_t[t]).ln();
                }
            }
        }
        Decomposition {
            lhs,
            ent,
            mi,
            residual: (lhs - (ent - mi)).abs(),
        }
    }
}

fn ngram_counts<T: Eq + Hash>(s: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if s.len() >= n {
        for g in s.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU with n = 1..4, add-one smoothing for n >= 2 and brevity
/// penalty `exp(min(0, 1 - |ref|/|cand|))`. An empty candidate scores 0.
pub fn bleu<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        let total: usize = cand.values().sum();
        let matched: usize = cand
            .iter()
            .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let precision = if n == 1 {
            if matched == 0 {
                return 0.0;
            }
            matched as f64 / total as f64
        } else {
            (matched + 1) as f64 / (total + 1) as f64
        };
        log_sum += precision.ln() / 4.0;
    }
    let bp = (1.0 - reference.len() as f64 / candidate.len() as f64)
        .min(0.0)
        .exp();
    bp * log_sum.exp()
}
