//! Pavement crack segmentation and measurement.
//!
//! Small no-pooling CNNs predict 5x5 crack blocks from 27x27 patches; an
//! ensemble of them is averaged into a probability map, thresholded, cleaned
//! up morphologically, skeletonized and measured.

pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod imageio;
pub mod metrics;
pub mod morphology;
pub mod nn;
pub mod patch;
pub mod skeleton;
pub mod synthetic;
pub mod training;

pub use error::{Error, ErrorClass, Result};
