//! Dense linear algebra, seeded randomness and the reverse-mode tape.

pub mod chain;
pub mod matrix;
pub mod random;
pub mod svd;
pub mod tape;

pub use matrix::{log_softmax, softmax, Matrix};
pub use random::{gaussian_sample, seeded, Rng, Stream};
pub use svd::{svd, SvdResult};
pub use tape::{Gradients, NodeId, Tape};
