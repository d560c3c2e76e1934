//! Geometry sensitive hashing lab.
//!
//! Generates manifold-structured data from latent `(γ, θ)`, trains the
//! network `ŷ = A·B·relu(C·x)` (frozen random `C`) with a weighted square
//! loss plus Frobenius and variance regularization, measures whether the
//! representation `B·relu(C·x)` hashes manifolds (small intra-manifold
//! variance, large inter-manifold distance), transfers to unseen manifolds
//! by one-shot lookup, and checks the supporting matrix lemmas numerically.

pub mod error;
pub mod expcli;
pub mod gshmetrics;
pub mod kernelview;
pub mod manifolds;
pub mod net;
pub mod numlin;
pub mod oracles;
pub mod transfer;

pub use error::{GshError, Result};
