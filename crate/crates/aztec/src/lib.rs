//! One-periodic Aztec diamond dimer coverings in a random environment.
//!
//! Layers, from ground truth upwards:
//! - [`model`]: signatures, interlacing chains, covering weights;
//! - [`enumeration`]: brute force over all coverings at small size;
//! - [`finite_moments`]: exact quenched moments via contour integrals;
//! - [`sampler`]: exact single-level sampling through dual RSK;
//! - [`environment`]: random environments and their coefficient series;
//! - [`asymptotics`]: limit shape, annealed and quenched covariance formulas;
//! - [`experiments`]: batch drivers producing machine-readable reports.

pub mod error;
pub mod model;
pub mod numeric;
pub mod enumeration;
pub mod finite_moments;
pub mod report;
pub mod sampler;
pub mod environment;
pub mod asymptotics;
pub mod experiments;

pub use error::{Error, Result};
