//! Penalty and vanishing-viscosity solver for evolution quasi-variational
//! inequalities with a gradient constraint `|∇u| <= G(u)`.

pub mod asymptotic;
pub mod continuation;
pub mod diagnostics;
pub mod error;
pub mod expr;
pub mod grid;
mod linalg;
pub mod model;
pub mod parabolic;
pub mod penalty;

pub use error::{Error, Result};
pub use expr::{parse_expression, Expression};
pub use grid::{Grid, ScalarField};
pub use model::ProblemSpec;
