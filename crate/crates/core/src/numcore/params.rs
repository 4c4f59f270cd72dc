//! Named parameter blocks with gradient accumulators and Adam state.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Handle to a block inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Initialization scheme for a new block.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
}

#[derive(Debug, Clone)]
struct Block {
    name: String,
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// All trainable blocks of one model, with their gradients and optimizer moments.
///
/// Cloning yields an independent snapshot; there is no shared aliasing between clones.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    blocks: Vec<Block>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a block. Names must be unique within the store.
    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let name = name.into();
        assert!(
            self.blocks.iter().all(|b| b.name != name),
            "duplicate parameter block `{name}`"
        );
        let n: usize = shape.iter().product();
        let value = match init {
            Init::Zeros => vec![0.0; n],
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
            }
        };
        self.blocks.push(Block {
            name,
            shape: shape.to_vec(),
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        ParamId(self.blocks.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.blocks.iter().position(|b| b.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.blocks[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.blocks[id.0].shape
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.blocks[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.blocks[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.blocks[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.blocks[id.0].grad
    }

    /// Value (read) and gradient (write) of the same block at once.
    pub fn split_mut(&mut self, id: ParamId) -> (&[f64], &mut [f64]) {
        let b = &mut self.blocks[id.0];
        (&b.value, &mut b.grad)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.blocks.len()).map(ParamId)
    }

    /// Adam steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.value.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Maps a flat scalar index (blocks in registration order) to `(block, offset)`.
    pub fn locate(&self, mut flat: usize) -> (ParamId, usize) {
        for (i, b) in self.blocks.iter().enumerate() {
            if flat < b.value.len() {
                return (ParamId(i), flat);
            }
            flat -= b.value.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn zero_grads(&mut self) {
        for b in &mut self.blocks {
            b.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Scales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm.is_finite() && norm > max_norm {
            let scale = max_norm / norm;
            for b in &mut self.blocks {
                b.grad.iter_mut().for_each(|g| *g *= scale);
            }
        }
        norm
    }

    /// Bias-corrected Adam update over every block.
    ///
    /// All gradients are checked before anything is written, so a divergence
    /// error leaves parameters and moments untouched.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some(b) = self
            .blocks
            .iter()
            .find(|b| b.grad.iter().any(|g| !g.is_finite()))
        {
            return Err(Error::Diverged {
                block: b.name.clone(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for b in &mut self.blocks {
            for i in 0..b.value.len() {
                let g = b.grad[i];
                b.m[i] = cfg.beta1 * b.m[i] + (1.0 - cfg.beta1) * g;
                b.v[i] = cfg.beta2 * b.v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = b.m[i] / bc1;
                let v_hat = b.v[i] / bc2;
                b.value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint(
            self.blocks
                .iter()
                .map(|b| {
                    (
                        b.name.clone(),
                        BlockData {
                            shape: b.shape.clone(),
                            values: b.value.clone(),
                        },
                    )
                })
                .collect(),
        )
    }

    /// Overwrites parameter values from a checkpoint. Every block of this store
    /// must be present with a matching shape; optimizer state is reset.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for b in &mut self.blocks {
            let data = ckpt
                .0
                .get(&b.name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks block `{}`", b.name)))?;
            if data.shape != b.shape || data.values.len() != b.value.len() {
                return Err(Error::Config(format!(
                    "checkpoint block `{}` has shape {:?}, expected {:?}",
                    b.name, data.shape, b.shape
                )));
            }
            b.value.copy_from_slice(&data.values);
            b.m.iter_mut().for_each(|x| *x = 0.0);
            b.v.iter_mut().for_each(|x| *x = 0.0);
        }
        self.step = 0;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockData {
    pub shape: Vec<usize>,
    /// Row-major.
    pub values: Vec<f64>,
}

/// JSON checkpoint: block name -> `{shape, values}`.
///
/// Floats are written in shortest round-trip form and parsed with correct
/// rounding, so save/load is value-exact for every finite `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Checkpoint(pub BTreeMap<String, BlockData>);

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_store(x: f64) -> (ParamStore, ParamId) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        let id = s.add("x", &[1], Init::Zeros, &mut rng);
        s.value_mut(id)[0] = x;
        (s, id)
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let id = s.add("w", &[3, 4], Init::FanIn(4), &mut rng);
        let before = s.value(id).to_vec();
        s.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(s.value(id), &before[..]);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn adam_first_and_second_step_match_hand_recurrence() {
        // t=1: m_hat = 1, v_hat = 1 -> x -= lr / (1 + eps); t=2 identical.
        let (mut s, id) = scalar_store(0.5);
        let cfg = AdamConfig::default();
        s.grad_mut(id)[0] = 1.0;
        s.adam_step(&cfg).unwrap();
        assert!((s.value(id)[0] - 0.49900000001).abs() < 1e-15);
        s.adam_step(&cfg).unwrap();
        assert!((s.value(id)[0] - 0.49800000002).abs() < 1e-15);
        assert_eq!(s.step(), 2);
    }

    #[test]
    fn non_finite_gradient_reports_block_and_leaves_state() {
        let (mut s, id) = scalar_store(0.5);
        s.grad_mut(id)[0] = f64::NAN;
        match s.adam_step(&AdamConfig::default()) {
            Err(Error::Diverged { block }) => assert_eq!(block, "x"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.value(id)[0], 0.5);
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn zero_grads_clears_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ParamStore::new();
        let a = s.add("a", &[5], Init::FanIn(5), &mut rng);
        let b = s.add("b", &[2, 2], Init::FanIn(2), &mut rng);
        s.grad_mut(a).iter_mut().for_each(|g| *g = 3.0);
        s.grad_mut(b)[1] = -1.0;
        s.zero_grads();
        assert!(s.ids().all(|id| s.grad(id).iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        let a = s.add("a", &[2], Init::Zeros, &mut rng);
        s.grad_mut(a).copy_from_slice(&[30.0, 40.0]);
        let before = s.clip_grad_norm(5.0);
        assert_eq!(before, 50.0);
        assert!((s.grad_norm() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn fan_in_init_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = ParamStore::new();
        let id = s.add("w", &[16, 25], Init::FanIn(25), &mut rng);
        assert!(s.value(id).iter().all(|v| v.abs() <= 0.2));
    }

    #[test]
    fn missing_block_in_checkpoint_is_config_error() {
        let (s, _) = scalar_store(1.0);
        let mut other = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        other.add("y", &[1], Init::Zeros, &mut rng);
        assert!(matches!(
            other.load_checkpoint(&s.to_checkpoint()),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn checkpoint_json_round_trip_is_value_exact(
            vals in proptest::collection::vec(
                any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut s = ParamStore::new();
            let id = s.add("blk", &[vals.len()], Init::Zeros, &mut rng);
            s.value_mut(id).copy_from_slice(&vals);
            let json = s.to_checkpoint().to_json().unwrap();
            let mut t = ParamStore::new();
            let id2 = t.add("blk", &[vals.len()], Init::Zeros, &mut rng);
            t.load_checkpoint(&Checkpoint::from_json(&json).unwrap()).unwrap();
            for (a, b) in t.value(id2).iter().zip(&vals) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
