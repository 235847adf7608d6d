pub mod dataset;
pub mod diff;
pub mod error;
pub mod eval;
pub mod explain;
pub mod gnn;
pub mod gsat;
pub mod kg;
pub mod model;
pub mod np;
pub mod task;
pub mod trainer;

pub use error::{Error, ErrorCategory, Result};
