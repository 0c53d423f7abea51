//! Projected aggregation dynamics in time-dependent domains.
//!
//! The crate is `no_std` + `alloc`. It covers moving-domain geometry, interaction
//! potentials, the projected particle scheme, exact discrete optimal transport and a
//! minimizing-movement solver for the viscous equation on grids.
#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` guards deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod geometry;
pub mod jko;
pub mod linalg;
pub mod particles;
pub mod potentials;
pub mod transport;

use alloc::string::String;

/// Errors shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("point lies outside the domain (signed distance {distance:.3e}, band {band:.3e})")]
    DomainViolation { distance: f64, band: f64 },
    #[error(
        "nearest point is not unique: distance {distance:.3e} >= prox radius {prox_radius:.3e}"
    )]
    AmbiguousProjection { distance: f64, prox_radius: f64 },
    #[error("step size too large: {0}")]
    StepSize(String),
    #[error("CFL condition violated: dt = {dt:.3e} exceeds {limit:.3e}")]
    Cfl { dt: f64, limit: f64 },
    #[error("problem has {entries} coupling entries, above the cap of {cap}; use the 1-D path or subsample")]
    SizeCap { entries: usize, cap: usize },
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("root not bracketed on [{lo}, {hi}]")]
    RootNotBracketed { lo: f64, hi: f64 },
    #[error("domain is not convex")]
    NonConvexDomain,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: &str) -> Error {
    Error::InvalidInput(String::from(msg))
}
