//! Geometric tolerances, all absolute and in constraint units.

/// Smallest pivot magnitude accepted by the simplex tableau.
pub const LP_PIVOT: f64 = 1e-11;
/// Phase-one residual (relative to the largest offset) still counted as feasible.
pub const LP_FEAS: f64 = 1e-9;
/// Points closer than this are the same vertex.
pub const DEDUP: f64 = 1e-8;
/// Default slack for membership tests.
pub const CONTAIN: f64 = 1e-8;
/// A half-space is redundant when its maximum over the set is within this of the offset.
pub const REDUNDANT: f64 = 1e-9;
/// Half-width of the band encoding a flat set by paired inequalities.
pub const FLAT: f64 = 1e-7;
/// Relative singular-value cutoff below which a point cloud is treated as flat.
pub const FLAT_REL: f64 = 1e-7;
/// Rows with a smaller Euclidean norm are treated as all-zero.
pub const ZERO_ROW: f64 = 1e-12;
/// Largest ambient dimension for explicit vertex computations.
pub const MAX_DIM: usize = 4;
