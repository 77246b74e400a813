//! Recurrent adversarial sequence models (generator GRU against a
//! context-conditioned GRU discriminator) for diagram-sequence completion and
//! next-frame prediction, built on a small reverse-mode autodiff engine.

pub mod datagen;
pub mod error;
pub mod eval;
pub mod features;
pub mod models;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
