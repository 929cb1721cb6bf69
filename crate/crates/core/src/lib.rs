pub mod config;
pub mod corpus;
mod error;
pub mod eval;
pub mod memory;
pub mod model;
pub mod numcore;
pub mod training;

pub use error::{CsmnError, Result};
