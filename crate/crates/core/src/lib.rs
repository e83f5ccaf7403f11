pub mod dataset;
pub mod error;
pub mod features;
pub mod forensics;
pub mod imaging;
pub mod metrics;
pub mod nn;
pub mod raster;
pub mod removal;
pub mod translate;

pub use error::{Error, Result};
