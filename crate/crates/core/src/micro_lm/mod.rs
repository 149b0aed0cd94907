//! The micro model: a small decoder-only transformer trained from scratch.

mod checkpoint;
mod config;
mod kernels;
mod layout;
mod model;
mod scalar;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ModelConfig, PosEncoding};
pub use layout::{Layout, TensorEntry};
pub use model::{argmax, Distributions, MicroModel, Model};
pub use scalar::Scalar;
