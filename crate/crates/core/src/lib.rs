pub mod augment;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod detector;
pub mod eor;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod report;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
