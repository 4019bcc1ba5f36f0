//! Anomaly Transformer: unsupervised time-series anomaly detection by
//! association discrepancy, on a small tape-based autodiff engine.

pub mod attention;
pub mod cli;
pub mod data;
pub mod detection;
pub mod discrepancy;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod io;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
