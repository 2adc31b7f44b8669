//! Signal-processing and statistics building blocks for no-reference quality
//! assessment of omnidirectional (360°) images.

pub mod dataset;
pub mod error;
pub mod metrics;
pub mod raster;
pub mod sphere;
pub mod subjective;
pub mod synth;
pub mod wavelet;

pub use error::{Error, Result};
pub use raster::{Plane, Projection, RasterImage};
