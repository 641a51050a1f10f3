//! Meta-learning over small differentiable models.
//!
//! The crate implements the family of first-order meta-learning updates
//! (Reptile and first-order MAML) along with exact MAML, on top of a small
//! from-scratch MLP with analytic gradients and Hessian-vector products.
//! Alongside the algorithms sit the verification tools: finite-difference
//! oracles, a quadratic task family on which the Taylor structure of the
//! updates is exact, Monte-Carlo estimators for the leading-order expansion
//! terms, and the solution-manifold interpretation of the meta-update.
//!
//! Data-parallel paths (meta-batches, Monte-Carlo estimators) run on rayon
//! under the default `parallel` feature and fall back to sequential loops
//! without it; results are byte-identical either way.

pub mod analysis;
pub mod error;
pub mod gradcheck;
pub mod inner;
pub mod loss;
pub mod meta;
pub mod mlp;
pub mod optim;
pub mod par;
pub mod rng;
pub mod task;
pub mod tasks;
pub mod vector;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use vector::{axpy, dot, ParamVector};
