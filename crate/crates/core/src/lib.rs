//! Speaker/listener language learning by entropy decomposition.

pub mod encoding;
pub mod envs;
pub mod error;
pub mod infometrics;
pub mod keywords;
pub mod listener;
pub mod numcore;
pub mod oracle;
pub mod speaker;
pub mod training;

pub use error::{Error, Result};
