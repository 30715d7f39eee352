//! Equivariant temporal-grounding core: data synthesis, augmentation,
//! model, losses, training and evaluation, all on a small reverse-mode
//! autodiff engine generic over f32/f64.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod par;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
