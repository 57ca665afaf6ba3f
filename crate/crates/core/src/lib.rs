pub mod cli;
pub mod error;
pub mod exec;
pub mod expr;
pub mod lattice;
pub mod problems;
pub mod regularity;
pub mod solver;
pub mod synthesis;

pub use error::{Error, Result};
pub use exec::Execution;
pub use lattice::{Grid, GridFunction, Side};
pub use problems::{ProblemClass, ProblemConfig, ProblemSpec};
