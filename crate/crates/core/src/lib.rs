//! Finite-difference laboratory for damped wave equations with a steep
//! potential well `V_beta = 1 + beta V`.
//!
//! The crate discretises the operators on a uniform grid of a truncated box,
//! computes resolvents, eigenpairs and trapezoidal trajectories, and measures
//! how the `beta` problems approach the Dirichlet problem on the well as
//! `beta` grows.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod domain;
pub mod error;
pub mod evolution;
pub mod identities;
pub mod operators;
pub mod run;
pub mod solver;
pub mod sparse;
pub mod spectral;
pub mod semilinear;
pub mod study;

pub use error::{Error, Result};
