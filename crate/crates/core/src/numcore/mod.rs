//! Dense numeric core: parameter stores, layers with reverse passes, Adam,
//! and a finite-difference gradient checker.

pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod params;

pub use gradcheck::grad_check;
pub use layers::{gru_step, Embedding, GruCache, GruCell, Linear};
pub use ops::{argmax, entropy, sample_categorical, sigmoid, softmax};
pub use params::{AdamConfig, BlockData, Checkpoint, Init, ParamId, ParamStore};
