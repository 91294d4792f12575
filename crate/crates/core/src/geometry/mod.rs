//! Polytopes and the set algebra built on them.

mod hull;
pub mod io;
pub mod lp;
mod polytope;
mod setexpr;
pub mod tol;

use thiserror::Error;

pub use hull::{enumerate_vertices, hull_hrep};
pub use lp::{LpError, LpSolution};
pub use polytope::Polytope;
pub use setexpr::{Ball, SetExpr, SupportFn};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("explicit vertex computations are limited to dimension {max}, got {0}", max = tol::MAX_DIM)]
    DimensionCap(usize),
    #[error("set is empty")]
    Empty,
    #[error("non-finite value in set data")]
    NonFinite,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<(), GeometryError> {
    if expected == found {
        Ok(())
    } else {
        Err(GeometryError::Dimension { expected, found })
    }
}
