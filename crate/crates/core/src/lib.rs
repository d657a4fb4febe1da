//! Convolutional classifier for single-lead ECG segments (CAD vs non-CAD):
//! data preparation, a small neural-network engine, training, metrics,
//! complexity audit and experiment harnesses.

pub mod checkpoint;
pub mod complexity;
pub mod ecg_synth;
pub mod error;
pub mod experiments;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod signal_io;
pub mod training;

pub use error::{Error, Result};
