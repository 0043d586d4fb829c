pub mod baselines;
pub mod data;
pub mod dist;
pub mod error;
pub mod geweke;
pub mod graph;
pub mod link;
pub mod model;
pub mod regression;
pub mod sampler;
pub mod simgen;
pub mod sparse;
pub mod trace;
pub mod tuning;

pub use error::{Error, Result};
