//! Core library for the settlement-detection toolkit: raster handling and
//! geo-referencing, patch dataset construction, a small CPU convolutional
//! network engine with dense (fully convolutional) inference, binary-mask
//! vectorization, and world-coordinate coverage analytics.

pub mod cnn;
pub mod dataset;
pub mod geo;
pub mod raster;
pub mod vectorize;

pub use raster::{GeoTransform, MeanImage, Raster, RasterError};
