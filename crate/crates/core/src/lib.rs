//! Mechanism design for collectively maintained shared equipment.

pub mod cli;
pub mod error;
pub mod first_best;
pub mod model;
pub mod oracle;
pub mod participation;
pub mod screening;
pub mod sim;
mod scalar;

pub use error::{Error, Result};
pub use first_best::{solve_first_best, FirstBestSolution};
pub use model::*;
