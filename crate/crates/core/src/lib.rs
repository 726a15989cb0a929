//! Activity images from inertial sensor windows, multimodal canonical
//! correlation fusion, and linear SVM classification.
//!
//! The flow is `ingest -> series -> encoders -> imaging -> features -> fusion -> classify`.

pub mod classify;
pub mod encoders;
pub mod error;
pub mod features;
pub mod fusion;
pub mod imaging;
pub mod ingest;
pub mod pipeline;
pub mod series;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
