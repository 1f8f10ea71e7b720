pub mod config;
pub mod deep_model;
pub mod error;
pub mod experiments;
pub mod gram;
pub mod io;
pub mod kernels;
pub mod optimize;
pub mod single_layer;

pub use error::{Error, Result};
