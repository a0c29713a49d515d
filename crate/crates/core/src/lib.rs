//! Desk-scale laboratory for stochastic gradient descent under
//! machine-learning-type gradient noise.
//!
//! The crate bundles a catalog of objective functions with exact gradients
//! and certified constants ([`landscapes`]), unbiased gradient-estimator
//! families with value-scaled noise ([`noise`]), the SGD iteration with
//! schedules and trajectory recording ([`engine`]), ensemble statistics,
//! rate fits, basin classification and error-process instrumentation
//! ([`analysis`]), and independent numerical oracles ([`verify`]).
//!
//! All randomness is drawn from counter-based streams split from a master
//! seed, so every trajectory is bit-reproducible independently of worker
//! count.

pub mod analysis;
pub mod engine;
pub mod error;
pub mod landscapes;
pub mod linalg;
pub mod noise;
pub mod verify;

pub use error::{Error, Result};
