//! Kato-constant numerics on discretized model manifolds.

pub mod config;
pub mod error;
pub mod expr;
pub mod gauge;
pub mod geometry;
pub mod kato;
pub mod profile;
pub mod quadrature;
pub mod report;
pub mod scenario;
pub mod spectral;
pub mod time_change;
pub mod volume;

pub use error::{Error, Result};
