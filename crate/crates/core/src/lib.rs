//! Averages along IP sets: exact circle arithmetic, IP multisets and their
//! sampling, character averages through the product formula, spectra of
//! generator sequences, concrete rotation and skew-product systems, uniformity
//! seminorms, and interval correlation experiments.

pub mod circle;
pub mod cli;
pub mod correlation;
pub mod error;
pub mod interval;
pub mod ipset;
pub mod spectral;
pub mod systems;
pub mod uniformity;

pub use error::{Error, Result};
