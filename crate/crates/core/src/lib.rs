//! Numerical Morse flow trees of multi-sheeted fronts over low-dimensional charts.

pub mod broken;
pub mod cli;
pub mod error;
pub mod flow;
pub mod morse;
pub mod scenario;
pub mod svg;
pub mod tree;

/// A chart point; one-dimensional charts use coordinate 0 only.
pub type Point = [f64; 2];

pub use error::{Error, Result};
