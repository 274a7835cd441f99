pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod heuristics;
pub mod model;
pub mod similarity;
pub mod sweep;
pub mod synthgen;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
