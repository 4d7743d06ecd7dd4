//! Session-based next-item recommendation with disentangled,
//! position-aware graph layers.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod graphs;
pub mod hashing;
pub mod manifest;
pub mod model;
pub mod numerics;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
