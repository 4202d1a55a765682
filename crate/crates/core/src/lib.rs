//! Deflection-optimal transmit power allocation for distributed detection.
//!
//! A network of energy-detecting sensors observes a common Gaussian source
//! and reports one-bit decisions to a fusion center over fading channels,
//! either on parallel channels (one noisy branch per sensor) or a multiple
//! access channel (decisions superimpose onto a single noisy observation).
//! The fusion center applies a linear test statistic whose quality is
//! measured by the modified deflection coefficient (MDC): the squared mean
//! separation between hypotheses over the variance under the signal-present
//! hypothesis.
//!
//! This crate computes the MDC in closed form, allocates transmit power to
//! maximize it under three constraint regimes (total power, total plus
//! individual caps, individual caps only) using analytic KKT procedures with
//! a convex-QP fallback, and validates everything against Monte-Carlo
//! simulation and exhaustive-search oracles.
//!
//! Modules:
//! - [`model`]: geometry, pathloss, detector calibration, joint detection
//!   statistics of the local sensors.
//! - [`bvn`]: bivariate normal tail probabilities (quadrature backend for
//!   the joint detection matrix).
//! - [`mdc`]: the deflection coefficient in transmit coordinates.
//! - [`solvers`]: power-allocation solvers and KKT diagnostics.
//! - [`sim`]: Monte-Carlo simulation of the full detection chain.
//! - [`oracle`]: brute-force references used to validate the fast paths.

pub mod bvn;
pub mod error;
pub mod mdc;
pub mod model;
pub mod oracle;
pub mod sim;
pub mod solvers;

pub use error::{Error, Result};
