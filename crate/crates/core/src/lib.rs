//! Word-embedding bias measurement and removal.
//!
//! Embeddings are stored with one word per row. Everything numeric is `f64`.

pub mod baseline;
pub mod bias_space;
pub mod checkpoint;
pub mod downstream;
pub mod dsd;
pub mod embedding;
pub mod error;
pub mod grad;
pub mod manifest;
pub mod metrics;
pub mod parallel;
pub mod synthetic;
pub mod tokenize;

pub use error::{Error, Result};
