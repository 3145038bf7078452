pub mod cli;
pub mod container;
pub mod error;
pub mod features;
pub mod geometry;
pub mod harness;
pub mod model;
pub mod render;

pub use error::{Error, Result};
