pub mod autodiff;
pub mod cli;
mod class;
pub mod decode;
pub mod detsim;
pub mod evalx;
pub mod model;
pub mod pipeline;
pub mod trainer;

pub use class::{EventClass, ParseClassError, NUM_CLASSES};
