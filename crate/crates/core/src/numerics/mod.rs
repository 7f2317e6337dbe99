//! Dense linear algebra, reverse-mode differentiation, optimization and
//! randomness.

pub mod matrix;
pub mod optim;
pub mod rng;
pub mod tape;

pub use matrix::{dot, Matrix};
pub use optim::{AdamW, AdamWConfig, Decay, Parameters};
pub use rng::{derive_seed, seeded_rng, SeededRng};
pub use tape::{Gradients, NodeId, Tape};
