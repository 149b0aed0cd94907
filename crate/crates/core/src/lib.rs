pub mod bridge;
pub mod error;
pub mod experiments;
pub mod lm;
pub mod metrics;
pub mod micro_lm;
pub mod probes;
pub mod rng;
pub mod string_lab;
pub mod trainer;

pub use error::{LabError, Result};
