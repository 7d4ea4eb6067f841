//! Classical statistical field model of quantum averages and correlations.
//!
//! Quantum states become covariance operators of zero-mean Gaussian random fields,
//! observables become quadratic forms of the field, and discrete detector clicks are
//! produced by thresholding the power a field deposits in each output channel.
//!
//! * [`hilbert`]: finite-dimensional complex linear algebra.
//! * [`random_field`]: Gaussian ensembles, background noise and sampling.
//! * [`observables`]: quadratic forms, classical averages, Hessian extraction.
//! * [`dynamics`]: exact and symplectic Schrödinger/Hamilton evolution.
//! * [`detection`]: entangled field pairs and threshold detectors.
//! * [`analysis`]: CHSH, Kolmogorov feasibility and the triangle analogy.

pub mod analysis;
pub mod detection;
pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod montecarlo;
pub mod observables;
pub mod random_field;

pub use error::{Error, Result};
