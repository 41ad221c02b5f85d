//! Dropout neural networks with expectation-linearization.
//!
//! The crate covers dropout training with the squared inference-gap penalty,
//! the two dropout inference modes (scaled deterministic and Monte-Carlo),
//! exact mask enumeration for small networks, and instruments that measure
//! the gap and evaluate the associated bounds.

pub mod data;
pub mod error;
pub mod inference;
pub mod network;
pub mod objective;
pub mod tensor;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
