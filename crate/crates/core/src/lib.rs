//! Simulator of a memristor-crossbar accelerator for GAN training.

pub mod config;
pub mod cost;
pub mod crossbar;
pub mod dataset;
pub mod diff;
pub mod error;
pub mod experiments;
pub mod gan;
pub mod mapper;
pub mod pipeline;
pub mod probe;

pub use error::{Error, Result};
