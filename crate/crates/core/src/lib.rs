pub mod diffusion;
pub mod error;
pub mod fsutil;
pub mod fusion;
pub mod imgio;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod restoration;
pub mod rng;
pub mod tensorgrad;
pub mod turbsim;

pub use error::{Error, Result};
