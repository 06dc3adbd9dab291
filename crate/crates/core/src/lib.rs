//! Kolmogorov-Arnold networks, their permutation symmetries, and
//! weight-space learning over KAN parameters.

pub mod align;
pub mod engine;
pub mod error;
pub mod graph;
pub mod kan;
pub mod metanet;
pub mod parallel;
pub mod spline;
pub mod symmetry;
pub mod zoo;

mod codec;

pub use error::{Error, Result};
