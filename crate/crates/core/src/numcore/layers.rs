//! Affine maps, embedding tables and the gated recurrent cell, each with a
//! hand-written reverse pass that accumulates into the owning [`ParamStore`].

use rand::Rng;

use super::ops::{matvec_acc, matvec_t_acc, outer_acc, sigmoid};
use super::params::{Init, ParamId, ParamStore};
use crate::error::{Error, Result};

/// `y = W x + b` with `W` of shape `(out, inp)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        out: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), &[out, inp], Init::FanIn(inp), rng);
        let b = store.add(format!("{name}.b"), &[out], Init::FanIn(inp), rng);
        Self { w, b, inp, out }
    }

    /// Same shapes, all entries zero (uniform output distributions at init).
    pub fn zeroed<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        out: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), &[out, inp], Init::Zeros, rng);
        let b = store.add(format!("{name}.b"), &[out], Init::Zeros, rng);
        Self { w, b, inp, out }
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inp);
        let mut y = store.value(self.b).to_vec();
        matvec_acc(store.value(self.w), x, &mut y);
        y
    }

    /// Accumulates `dW`, `db` and returns `dx`.
    pub fn backward(&self, store: &mut ParamStore, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.inp];
        matvec_t_acc(store.value(self.w), dy, &mut dx);
        self.backward_params(store, x, dy);
        dx
    }

    /// Parameter gradients only, for inputs that are not differentiated.
    pub fn backward_params(&self, store: &mut ParamStore, x: &[f64], dy: &[f64]) {
        outer_acc(store.grad_mut(self.w), dy, x);
        for (g, d) in store.grad_mut(self.b).iter_mut().zip(dy) {
            *g += d;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        rows: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let table = store.add(format!("{name}.table"), &[rows, dim], Init::FanIn(dim), rng);
        Self { table, rows, dim }
    }

    pub fn lookup<'a>(&self, store: &'a ParamStore, row: usize) -> &'a [f64] {
        &store.value(self.table)[row * self.dim..(row + 1) * self.dim]
    }

    pub fn backward(&self, store: &mut ParamStore, row: usize, dy: &[f64]) {
        let g = &mut store.grad_mut(self.table)[row * self.dim..(row + 1) * self.dim];
        for (a, b) in g.iter_mut().zip(dy) {
            *a += b;
        }
    }
}

/// Gated recurrent cell:
///
/// ```text
/// z  = sigma(W_z x + U_z h + b_z)
/// r  = sigma(W_r x + U_r h + b_r)
/// h~ = tanh(W_h x + U_h (r * h) + b_h)
/// h' = (1 - z) * h + z * h~
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub hidden: usize,
    pub input: usize,
}

/// Forward intermediates needed by [`GruCell::backward`].
#[derive(Debug, Clone)]
pub struct GruCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub h_tilde: Vec<f64>,
    pub h: Vec<f64>,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let (d, h) = (input, hidden);
        let mut w = |suffix: &str, shape: &[usize], fan: usize| {
            store.add(format!("{name}.{suffix}"), shape, Init::FanIn(fan), rng)
        };
        Self {
            w_z: w("w_z", &[h, d], d),
            u_z: w("u_z", &[h, h], h),
            b_z: w("b_z", &[h], h),
            w_r: w("w_r", &[h, d], d),
            u_r: w("u_r", &[h, h], h),
            b_r: w("b_r", &[h], h),
            w_h: w("w_h", &[h, d], d),
            u_h: w("u_h", &[h, h], h),
            b_h: w("b_h", &[h], h),
            hidden,
            input,
        }
    }

    /// One recurrent step. Fails on width mismatches.
    pub fn step(&self, store: &ParamStore, h_prev: &[f64], x: &[f64]) -> Result<GruCache> {
        if h_prev.len() != self.hidden || x.len() != self.input {
            return Err(Error::Config(format!(
                "gru step expects h[{}], x[{}]; got h[{}], x[{}]",
                self.hidden,
                self.input,
                h_prev.len(),
                x.len()
            )));
        }
        Ok(self.step_unchecked(store, h_prev, x))
    }

    pub(crate) fn step_unchecked(&self, store: &ParamStore, h_prev: &[f64], x: &[f64]) -> GruCache {
        let gate = |w: ParamId, u: ParamId, b: ParamId, hin: &[f64]| {
            let mut a = store.value(b).to_vec();
            matvec_acc(store.value(w), x, &mut a);
            matvec_acc(store.value(u), hin, &mut a);
            a
        };
        let z: Vec<f64> = gate(self.w_z, self.u_z, self.b_z, h_prev)
            .into_iter()
            .map(sigmoid)
            .collect();
        let r: Vec<f64> = gate(self.w_r, self.u_r, self.b_r, h_prev)
            .into_iter()
            .map(sigmoid)
            .collect();
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let h_tilde: Vec<f64> = gate(self.w_h, self.u_h, self.b_h, &rh)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let h = (0..self.hidden)
            .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * h_tilde[i])
            .collect();
        GruCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            h_tilde,
            h,
        }
    }

    /// Given `dL/dh'`, accumulates parameter gradients and returns
    /// `(dL/dx, dL/dh_prev)`.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        c: &GruCache,
        dh: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let n = self.hidden;
        let mut dx = vec![0.0; self.input];
        let mut dh_prev: Vec<f64> = (0..n).map(|i| dh[i] * (1.0 - c.z[i])).collect();

        let da_h: Vec<f64> = (0..n)
            .map(|i| dh[i] * c.z[i] * (1.0 - c.h_tilde[i] * c.h_tilde[i]))
            .collect();
        let da_z: Vec<f64> = (0..n)
            .map(|i| dh[i] * (c.h_tilde[i] - c.h_prev[i]) * c.z[i] * (1.0 - c.z[i]))
            .collect();

        let rh: Vec<f64> = c.r.iter().zip(&c.h_prev).map(|(a, b)| a * b).collect();
        let mut drh = vec![0.0; n];
        matvec_t_acc(store.value(self.u_h), &da_h, &mut drh);
        let da_r: Vec<f64> = (0..n)
            .map(|i| drh[i] * c.h_prev[i] * c.r[i] * (1.0 - c.r[i]))
            .collect();
        for i in 0..n {
            dh_prev[i] += drh[i] * c.r[i];
        }

        matvec_t_acc(store.value(self.w_h), &da_h, &mut dx);
        matvec_t_acc(store.value(self.w_z), &da_z, &mut dx);
        matvec_t_acc(store.value(self.w_r), &da_r, &mut dx);
        matvec_t_acc(store.value(self.u_z), &da_z, &mut dh_prev);
        matvec_t_acc(store.value(self.u_r), &da_r, &mut dh_prev);

        outer_acc(store.grad_mut(self.w_h), &da_h, &c.x);
        outer_acc(store.grad_mut(self.u_h), &da_h, &rh);
        outer_acc(store.grad_mut(self.w_z), &da_z, &c.x);
        outer_acc(store.grad_mut(self.u_z), &da_z, &c.h_prev);
        outer_acc(store.grad_mut(self.w_r), &da_r, &c.x);
        outer_acc(store.grad_mut(self.u_r), &da_r, &c.h_prev);
        for (b, d) in [(self.b_h, &da_h), (self.b_z, &da_z), (self.b_r, &da_r)] {
            for (g, v) in store.grad_mut(b).iter_mut().zip(d.iter()) {
                *g += v;
            }
        }
        (dx, dh_prev)
    }
}

/// Free-function form of [`GruCell::step`] returning only the new state.
pub fn gru_step(
    cell: &GruCell,
    store: &ParamStore,
    h_prev: &[f64],
    x: &[f64],
) -> Result<Vec<f64>> {
    Ok(cell.step(store, h_prev, x)?.h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gradcheck::grad_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cell(seed: u64, d: usize, h: usize) -> (ParamStore, GruCell) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let c = GruCell::new(&mut s, "gru", d, h, &mut rng);
        (s, c)
    }

    #[test]
    fn zero_parameters_and_inputs_stay_at_zero() {
        let (mut s, c) = cell(0, 3, 4);
        for id in s.ids().collect::<Vec<_>>() {
            s.value_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
        let out = c.step(&s, &[0.0; 4], &[0.0; 3]).unwrap();
        assert!(out.z.iter().all(|&z| z == 0.5));
        assert_eq!(out.h, vec![0.0; 4]);
    }

    #[test]
    fn width_mismatch_is_config_error() {
        let (s, c) = cell(0, 3, 4);
        assert!(matches!(c.step(&s, &[0.0; 3], &[0.0; 3]), Err(Error::Config(_))));
        assert!(matches!(gru_step(&c, &s, &[0.0; 4], &[0.0; 2]), Err(Error::Config(_))));
    }

    #[test]
    fn unrolled_gradient_matches_finite_differences() {
        // loss = sum_t <v, h_t> over a 4-step unroll
        let (mut s, c) = cell(11, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |s: &mut ParamStore| {
            s.zero_grads();
            let mut h = vec![0.1; 5];
            let mut caches = Vec::new();
            let mut total = 0.0;
            for x in &xs {
                let cache = c.step(s, &h, x).unwrap();
                total += cache.h.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
                h = cache.h.clone();
                caches.push(cache);
            }
            let mut dh = vec![0.0; 5];
            for cache in caches.iter().rev() {
                for (d, vi) in dh.iter_mut().zip(&v) {
                    *d += vi;
                }
                let (_, dprev) = c.backward(s, cache, &dh);
                dh = dprev;
            }
            total
        };
        let err = grad_check(&mut s, loss, 1e-6, 200, &mut rng);
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn w_h_gradient_matches_finite_differences() {
        let (mut s, c) = cell(21, 2, 3);
        let x = [0.3, -0.7];
        let h0 = [0.2, -0.4, 0.6];
        s.zero_grads();
        let cache = c.step(&s, &h0, &x).unwrap();
        c.backward(&mut s, &cache, &[1.0, 1.0, 1.0]);
        let analytic = s.grad(c.w_h).to_vec();
        let eps = 1e-6;
        for i in 0..analytic.len() {
            let orig = s.value(c.w_h)[i];
            s.value_mut(c.w_h)[i] = orig + eps;
            let up: f64 = c.step(&s, &h0, &x).unwrap().h.iter().sum();
            s.value_mut(c.w_h)[i] = orig - eps;
            let down: f64 = c.step(&s, &h0, &x).unwrap().h.iter().sum();
            s.value_mut(c.w_h)[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-8);
            assert!(rel < 1e-5, "entry {i}: fd {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = ParamStore::new();
        let lin = Linear::new(&mut s, "lin", 4, 3, &mut rng);
        let x = [0.5, -1.0, 0.25, 2.0];
        let loss = |s: &mut ParamStore| {
            s.zero_grads();
            let y = lin.forward(s, &x);
            let l: f64 = y.iter().map(|v| v * v).sum::<f64>() * 0.5;
            lin.backward(s, &x, &y);
            l
        };
        let err = grad_check(&mut s, loss, 1e-6, 15, &mut rng);
        assert!(err < 1e-7);
    }

    proptest! {
        #[test]
        fn bounded_state_stays_bounded(
            seed in 0u64..1000,
            h in proptest::collection::vec(-0.999f64..0.999, 4),
            x in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            let (s, c) = cell(seed, 3, 4);
            let out = gru_step(&c, &s, &h, &x).unwrap();
            prop_assert!(out.iter().all(|v| v.abs() < 1.0));
        }
    }
}
