//! Covariance-based user activity detection for massive MIMO.
//!
//! The crate is split along the processing chain:
//!
//! * [`model`] draws pilots, activity patterns, channels and noise, and forms
//!   observations together with their true and sample covariances.
//! * [`estimators`] recovers the activity pattern from the sample covariance
//!   by coordinate descent on the ML, MMV and NNLS objectives.
//! * [`lifted`] holds the vectorized NNLS formulation, reference solvers used
//!   to cross-check the estimators, and the recovery-guarantee evaluators.
//! * [`metrics`] turns estimates into detections, rates and ROC curves.
//! * [`harness`] runs seeded Monte Carlo experiments and writes results.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated comparisons deliberately reject NaN

pub mod error;
pub mod estimators;
pub mod harness;
pub mod io;
pub mod lifted;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;

pub use error::{Error, Result};

/// Complex double used for every matrix in the crate.
pub type C64 = nalgebra::Complex<f64>;
/// Dense complex matrix (column-major).
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dense complex vector.
pub type CVector = nalgebra::DVector<C64>;
