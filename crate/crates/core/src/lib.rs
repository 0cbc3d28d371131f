pub mod anatomy;
pub mod atlas;
pub mod error;
pub mod evalmetrics;
pub mod losses;
pub mod maskfusion;
pub mod model;
pub mod morphology;
pub mod partition;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod testkit;
pub mod train;

pub use error::{Error, Result};
