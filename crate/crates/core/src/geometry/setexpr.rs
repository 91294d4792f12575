//! Lazy set expressions evaluated only through support functions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{check_dim, GeometryError, Polytope};
use crate::scalar::Real;

/// Anything with a support function `h(d) = max dᵀx`.
pub trait SupportFn<T: Real> {
    fn dim(&self) -> usize;
    fn support(&self, d: &DVector<T>) -> Result<T, GeometryError>;
}

/// Euclidean ball of radius `radius` centred at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball<T: Real> {
    pub radius: T,
    pub dim: usize,
}

impl<T: Real> SupportFn<T> for Ball<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn support(&self, d: &DVector<T>) -> Result<T, GeometryError> {
        check_dim(self.dim, d.len())?;
        Ok(self.radius * d.norm())
    }
}

#[derive(Debug, Clone)]
pub enum SetExpr<T: Real> {
    Poly(Arc<Polytope<T>>),
    Ball(Ball<T>),
    Image(Arc<DMatrix<T>>, Arc<SetExpr<T>>),
    Sum { dim: usize, terms: Vec<SetExpr<T>> },
}

impl<T: Real> SetExpr<T> {
    /// The set `{0}` in dimension `dim`.
    pub fn zero(dim: usize) -> Self {
        SetExpr::Sum { dim, terms: Vec::new() }
    }

    pub fn poly(p: Polytope<T>) -> Self {
        SetExpr::Poly(Arc::new(p))
    }

    pub fn image(m: DMatrix<T>, inner: SetExpr<T>) -> Result<Self, GeometryError> {
        check_dim(m.ncols(), inner.dim())?;
        Ok(SetExpr::Image(Arc::new(m), Arc::new(inner)))
    }

    pub fn sum(dim: usize, terms: Vec<SetExpr<T>>) -> Result<Self, GeometryError> {
        for t in &terms {
            check_dim(dim, t.dim())?;
        }
        Ok(SetExpr::Sum { dim, terms })
    }

    /// Whether the expression is structurally `{0}`.
    pub fn is_trivially_zero(&self) -> bool {
        match self {
            SetExpr::Poly(_) => false,
            SetExpr::Ball(b) => b.radius == T::zero(),
            SetExpr::Image(m, inner) => m.iter().all(|v| *v == T::zero()) || inner.is_trivially_zero(),
            SetExpr::Sum { terms, .. } => terms.iter().all(|t| t.is_trivially_zero()),
        }
    }

    /// Explicit polytope for the expression (dimension ≤ 4, no balls).
    pub fn to_polytope(&self) -> Result<Polytope<T>, GeometryError> {
        match self {
            SetExpr::Poly(p) => Ok((**p).clone()),
            SetExpr::Ball(b) => Err(GeometryError::Dimension {
                expected: 0,
                found: b.dim,
            }),
            SetExpr::Image(m, inner) => inner.to_polytope()?.affine_image(m),
            SetExpr::Sum { dim, terms } => {
                let mut acc = Polytope::point(&DVector::zeros(*dim));
                for t in terms {
                    acc = acc.minkowski_sum(&t.to_polytope()?)?;
                }
                Ok(acc)
            }
        }
    }
}

impl<T: Real> SupportFn<T> for SetExpr<T> {
    fn dim(&self) -> usize {
        match self {
            SetExpr::Poly(p) => p.dim(),
            SetExpr::Ball(b) => b.dim,
            SetExpr::Image(m, _) => m.nrows(),
            SetExpr::Sum { dim, .. } => *dim,
        }
    }

    fn support(&self, d: &DVector<T>) -> Result<T, GeometryError> {
        check_dim(SupportFn::dim(self), d.len())?;
        match self {
            SetExpr::Poly(p) => p.support(d),
            SetExpr::Ball(b) => b.support(d),
            SetExpr::Image(m, inner) => inner.support(&(m.transpose() * d)),
            SetExpr::Sum { terms, .. } => {
                let mut h = T::zero();
                for t in terms {
                    h += t.support(d)?;
                }
                Ok(h)
            }
        }
    }
}
