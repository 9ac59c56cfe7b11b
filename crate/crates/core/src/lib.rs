pub mod augment;
pub mod blend;
pub mod cli;
pub mod config;
pub mod error;
pub mod factors;
pub mod imageio;
pub mod model;
pub mod nets;
pub mod phantom;
pub mod service;
pub mod training;
pub mod workflow;

pub use error::{DaaError, Result};
