//! Games of ordered preference: symbolic KKT assembly (reduced and complete
//! formulations), a homotopy interior-point solver, closed-form quadratic
//! recursions and a second-order certifier.

pub mod error;
pub mod expr;
pub mod harness;
pub mod kkt;
pub mod linalg;
pub mod model;
pub mod pdip;
pub mod quadratic;
pub mod sosc;

pub use error::{Error, Result};
