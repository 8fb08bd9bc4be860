pub mod belief;
pub mod cli;
pub mod error;
pub mod heuristics;
pub mod index;
pub mod instances;
pub mod model;
pub mod prob;
pub mod reduction;
pub mod sim;

pub use error::{Error, Result};
