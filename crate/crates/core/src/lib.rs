//! Per-feature sensitivity analysis for SE(3) pose estimation.
//!
//! The library follows one operator chain: a measurement produces a
//! reprojection residual, the residual a left-trivialized Jacobian, the
//! Jacobian a Gauss-Newton score, and the score is projected onto the
//! observable subspace of the curvature operator and amplified by its
//! restricted inverse. The G-norm of the result is the per-feature
//! sensitivity index; its spectral decomposition drives two training-free
//! diagnostics (dynamic-feature flags and observability-collapse verdicts),
//! a solver restricted to the observable subspace, and Monte Carlo harnesses
//! that verify the finite-sample behavior of all of the above.

pub mod camera;
pub mod curvature;
pub mod detectors;
pub mod error;
pub mod estimator;
pub mod goi;
pub mod io;
pub mod lie;
pub mod sim;

pub use error::{GoiError, Result};
