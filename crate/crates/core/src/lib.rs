//! Linear probing toolkit for the intermediate representations of a
//! text-to-image pipeline: ridge probes scored against human attribute
//! ratings, permutation tests, nested cross-validation and attribute
//! entanglement analysis.

pub mod analysis;
pub mod config;
pub mod cv;
pub mod data;
pub mod entangle;
pub mod error;
pub mod preprocess;
pub mod probe;
pub mod report;
pub mod stats;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
