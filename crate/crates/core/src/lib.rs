//! Gaussian process regression with a non-stationary Gibbs kernel and
//! heteroscedastic noise.
//!
//! The length scale `ℓ(x)`, signal amplitude `σ(x)` and noise level `ω(x)`
//! are each either a learned constant or the exponential of a latent GP
//! conditioned on values at a small set of shared inducing inputs. All
//! parameters are fitted jointly by Adam on the negative log marginal
//! likelihood plus priors, with exact gradients.
//!
//! Predictions separate epistemic variance `var(f(x))` from aleatoric
//! variance `ω(x)²`, which drives the active-learning loop in [`active`].

pub mod active;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod kernels;
pub mod latent;
pub mod model;
pub mod numerics;
pub mod seed;
pub mod train;

pub use error::{NsgpError, Result};
pub use model::{NsgpModel, Prediction, Variant};
pub use numerics::Matrix;

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
