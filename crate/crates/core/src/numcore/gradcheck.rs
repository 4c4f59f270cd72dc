use rand::Rng;

use super::params::ParamStore;

/// Compares analytic gradients against central finite differences.
///
/// `loss_and_grad` must zero the gradients, evaluate the loss, run the reverse
/// pass into the store, and return the loss. It is called once for the analytic
/// gradient and twice per probe. Probes are scalar parameters drawn uniformly
/// from the whole store. Returns the largest relative error
/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn grad_check<F, R>(
    store: &mut ParamStore,
    mut loss_and_grad: F,
    eps: f64,
    n_probes: usize,
    rng: &mut R,
) -> f64
where
    F: FnMut(&mut ParamStore) -> f64,
    R: Rng + ?Sized,
{
    loss_and_grad(store);
    let analytic: Vec<Vec<f64>> = store.ids().map(|id| store.grad(id).to_vec()).collect();
    let total = store.len();
    let mut worst = 0.0f64;
    for _ in 0..n_probes {
        let (id, off) = store.locate(rng.gen_range(0..total));
        let orig = store.value(id)[off];
        store.value_mut(id)[off] = orig + eps;
        let up = loss_and_grad(store);
        store.value_mut(id)[off] = orig - eps;
        let down = loss_and_grad(store);
        store.value_mut(id)[off] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[store.ids().position(|i| i == id).unwrap()][off];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    // leave the store holding the analytic gradient at the unperturbed point
    loss_and_grad(store);
    worst
}
