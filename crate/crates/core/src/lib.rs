pub mod acquisition;
pub mod coreset;
pub mod error;
pub mod experiment;
pub mod geoembed;
pub mod model;
pub mod raster;

pub use error::{Error, Result};
