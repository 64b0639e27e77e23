//! Proper-speed regression from semantic label maps.
//!
//! The pipeline fuses multi-scale segmentation scores into label maps,
//! summarizes each map as a spatial pyramid of class histograms and regresses
//! the speed a driver should keep from that descriptor. Everything from the
//! label-map format to the solvers is implemented here so that results are
//! bit-reproducible from a seed.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod fusion;
pub mod labels;
pub mod regressors;

pub use error::{Error, Result};
