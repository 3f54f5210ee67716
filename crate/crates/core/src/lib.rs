pub mod analysis;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod layers;
pub mod linalg;
pub mod loss;
pub mod noise;
pub mod train;
pub mod vi;

pub use error::{Error, Result};
