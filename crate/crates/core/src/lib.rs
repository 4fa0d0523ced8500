pub mod agent;
pub mod baselines;
pub mod denoiser;
pub mod engine;
pub mod env;
pub mod error;
pub mod field;
pub mod forward;
pub mod fourier;
pub mod harness;
pub mod nn;
pub mod task;

pub use error::{Error, Result};
pub use field::Field;
