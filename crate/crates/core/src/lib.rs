//! Error regions for quantum state tomography under the positivity
//! constraint.
//!
//! The crate is organised by task:
//!
//! * [`statespace`]: generalized Gell-Mann basis, density operators and Bloch
//!   coordinates.
//! * [`tomography`]: measurement designs, linear inversion and the pull-back of
//!   outcome-space confidence ellipsoids to state space.
//! * [`ellipsoid`]: state-space ellipsoids and the test of whether they lie
//!   inside the PSD states.
//! * [`hardness`]: the balanced-sum reduction, its constants and a brute-force
//!   ground truth.
//! * [`specialfn`]: the regularized incomplete gamma function with certified
//!   error bounds, and the credible radius of a Gaussian.
//! * [`bayes`]: Gaussian posteriors truncated to the PSD states.

pub mod bayes;
pub mod ellipsoid;
pub mod error;
pub mod hardness;
pub mod json;
pub mod rng;
pub mod specialfn;
pub mod statespace;
pub mod tomography;

pub use error::{Error, Result};

/// Crate version, embedded in every CLI document.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
