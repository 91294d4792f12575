//! Affine maps `c + M δ` of the stacked decision vector.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Affine<T: Real> {
    pub c: DVector<T>,
    pub m: DMatrix<T>,
}

impl<T: Real> Affine<T> {
    pub fn zeros(dim: usize, nv: usize) -> Self {
        Self {
            c: DVector::zeros(dim),
            m: DMatrix::zeros(dim, nv),
        }
    }

    pub fn constant(c: DVector<T>, nv: usize) -> Self {
        let dim = c.len();
        Self {
            c,
            m: DMatrix::zeros(dim, nv),
        }
    }

    /// The `l`-th block of size `ny`.
    pub fn selector(ny: usize, nv: usize, l: usize) -> Self {
        let mut m = DMatrix::zeros(ny, nv);
        m.view_mut((0, l * ny), (ny, ny)).fill_with_identity();
        Self {
            c: DVector::zeros(ny),
            m,
        }
    }

    pub fn mul_left(&self, a: &DMatrix<T>) -> Self {
        Self {
            c: a * &self.c,
            m: a * &self.m,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            c: &self.c + &other.c,
            m: &self.m + &other.m,
        }
    }

    pub fn add_const(&self, v: &DVector<T>) -> Self {
        Self {
            c: &self.c + v,
            m: self.m.clone(),
        }
    }

    /// `[top; bottom]`
    pub fn stack(top: &Self, bottom: &Self) -> Self {
        let (a, b) = (top.c.len(), bottom.c.len());
        let nv = top.m.ncols();
        let mut c = DVector::zeros(a + b);
        c.rows_mut(0, a).copy_from(&top.c);
        c.rows_mut(a, b).copy_from(&bottom.c);
        let mut m = DMatrix::zeros(a + b, nv);
        m.view_mut((0, 0), (a, nv)).copy_from(&top.m);
        m.view_mut((a, 0), (b, nv)).copy_from(&bottom.m);
        Self { c, m }
    }

    pub fn eval(&self, x: &DVector<T>) -> DVector<T> {
        &self.c + &self.m * x
    }
}
