use nalgebra::{DMatrix, DVector};

use super::hull::{enumerate_vertices, hull_hrep};
use super::lp::{self, LpError, LpSolution};
use super::setexpr::SupportFn;
use super::{check_dim, tol, GeometryError};
use crate::scalar::Real;

/// Convex polyhedron `{x : F x ≤ g}` with unit-norm rows.
///
/// Vertices may be attached at construction (boxes, hulls); they are never
/// filled in later, so a `Polytope` is immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope<T: Real> {
    f: DMatrix<T>,
    g: DVector<T>,
    vertices: Option<Vec<DVector<T>>>,
}

impl<T: Real> Polytope<T> {
    /// Builds from raw rows. Rows are scaled to unit norm; zero rows are
    /// dropped when trivially satisfied and turn the set empty otherwise.
    pub fn new(f: DMatrix<T>, g: DVector<T>) -> Result<Self, GeometryError> {
        check_dim(f.nrows(), g.len())?;
        if f.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let d = f.ncols();
        let zero = T::tol(tol::ZERO_ROW);
        let mut rows = Vec::with_capacity(f.nrows());
        let mut offsets = Vec::with_capacity(f.nrows());
        let mut contradiction = false;
        for i in 0..f.nrows() {
            let row = f.row(i).transpose();
            let n = row.norm();
            if n <= zero {
                if g[i] < -T::tol(tol::CONTAIN) {
                    contradiction = true;
                }
                continue;
            }
            // rows already of unit norm are kept bit-for-bit so text round trips are exact
            if (n - T::one()).abs() <= T::default_epsilon() * T::lit(8.0) {
                rows.push(row);
                offsets.push(g[i]);
            } else {
                rows.push(row / n);
                offsets.push(g[i] / n);
            }
        }
        if contradiction && d > 0 {
            return Ok(Self::empty(d));
        }
        Ok(Self::from_rows(d, &rows, &offsets))
    }

    fn from_rows(d: usize, rows: &[DVector<T>], offsets: &[T]) -> Self {
        let mut f = DMatrix::zeros(rows.len(), d);
        for (i, r) in rows.iter().enumerate() {
            f.row_mut(i).copy_from(&r.transpose());
        }
        Self {
            f,
            g: DVector::from_column_slice(offsets),
            vertices: None,
        }
    }

    /// Attaches a vertex list computed elsewhere.
    pub(crate) fn with_vertices(mut self, vertices: Vec<DVector<T>>) -> Self {
        self.vertices = Some(vertices);
        self
    }

    /// Returns the same set with its vertex list computed and attached.
    pub fn with_computed_vertices(self) -> Result<Self, GeometryError> {
        if self.vertices.is_some() {
            return Ok(self);
        }
        let v = enumerate_vertices(&self.f, &self.g)?;
        Ok(self.with_vertices(v))
    }

    /// A contradictory pair of half-spaces.
    pub fn empty(d: usize) -> Self {
        let mut f = DMatrix::zeros(2, d);
        f[(0, 0)] = T::one();
        f[(1, 0)] = -T::one();
        Self {
            f,
            g: DVector::from_element(2, -T::one()),
            vertices: Some(Vec::new()),
        }
    }

    /// Axis-aligned box `lo ≤ x ≤ hi`.
    pub fn from_box(lo: &DVector<T>, hi: &DVector<T>) -> Result<Self, GeometryError> {
        check_dim(lo.len(), hi.len())?;
        let d = lo.len();
        if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
            return Ok(Self::empty(d));
        }
        let mut f = DMatrix::zeros(2 * d, d);
        let mut g = DVector::zeros(2 * d);
        for k in 0..d {
            f[(2 * k, k)] = T::one();
            g[2 * k] = hi[k];
            f[(2 * k + 1, k)] = -T::one();
            g[2 * k + 1] = -lo[k];
        }
        let mut corners: Vec<DVector<T>> = Vec::new();
        if d <= tol::MAX_DIM {
            for mask in 0..(1usize << d) {
                let c = DVector::from_fn(d, |k, _| if mask >> k & 1 == 1 { hi[k] } else { lo[k] });
                if !corners.iter().any(|v| (v - &c).amax() <= T::tol(tol::DEDUP)) {
                    corners.push(c);
                }
            }
            Ok(Self::new(f, g)?.with_vertices(corners))
        } else {
            Self::new(f, g)
        }
    }

    /// Symmetric box `|x_k| ≤ r_k`.
    pub fn symmetric_box(r: &DVector<T>) -> Result<Self, GeometryError> {
        Self::from_box(&-r, r)
    }

    /// The single point `p`, as a zero-width box.
    pub fn point(p: &DVector<T>) -> Self {
        Self::from_box(p, p).expect("point box is well formed")
    }

    pub fn dim(&self) -> usize {
        self.f.ncols()
    }

    pub fn n_halfspaces(&self) -> usize {
        self.f.nrows()
    }

    pub fn normals(&self) -> &DMatrix<T> {
        &self.f
    }

    pub fn offsets(&self) -> &DVector<T> {
        &self.g
    }

    pub fn cached_vertices(&self) -> Option<&[DVector<T>]> {
        self.vertices.as_deref()
    }

    /// Largest value of `F x − g`; nonpositive iff `x` is inside.
    pub fn max_violation(&self, x: &DVector<T>) -> T {
        if self.f.nrows() == 0 {
            return -T::max_value().unwrap_or_else(T::one);
        }
        let r = &self.f * x - &self.g;
        r.max()
    }

    pub fn contains(&self, x: &DVector<T>, tol: T) -> bool {
        x.len() == self.dim() && self.max_violation(x) <= tol
    }

    /// `max cᵀx` over the set, by LP.
    pub fn maximize(&self, c: &DVector<T>) -> Result<LpSolution<T>, GeometryError> {
        check_dim(self.dim(), c.len())?;
        Ok(lp::maximize(c, &self.f, &self.g)?)
    }

    pub fn is_empty(&self) -> bool {
        if let Some(v) = &self.vertices {
            return v.is_empty();
        }
        matches!(lp::feasible_point(&self.f, &self.g), Err(LpError::Infeasible(_)))
    }

    /// Whether `aᵀx ≤ b` holds on the whole set (up to the redundancy tolerance).
    pub fn is_redundant(&self, a: &DVector<T>, b: T) -> bool {
        match self.support(a) {
            Ok(h) => h <= b + T::tol(tol::REDUNDANT),
            Err(GeometryError::Lp(LpError::Infeasible(_))) => true,
            Err(_) => false,
        }
    }

    /// Removes duplicate and redundant half-spaces.
    pub fn minimal(&self) -> Result<Self, GeometryError> {
        if self.is_empty() {
            return Ok(Self::empty(self.dim()));
        }
        let d = self.dim();
        let m = self.n_halfspaces();
        // drop exact duplicates first, keeping the tightest offset
        let mut keep: Vec<usize> = Vec::new();
        'outer: for i in 0..m {
            for k in keep.iter_mut() {
                let diff = (self.f.row(i) - self.f.row(*k)).amax();
                if diff <= T::tol(tol::DEDUP) {
                    if self.g[i] < self.g[*k] {
                        *k = i;
                    }
                    continue 'outer;
                }
            }
            keep.push(i);
        }
        let mut active = vec![true; keep.len()];
        for idx in 0..keep.len() {
            active[idx] = false;
            let rest: Vec<usize> = (0..keep.len()).filter(|&j| active[j]).map(|j| keep[j]).collect();
            let f = self.f.select_rows(rest.iter());
            let g = self.g.select_rows(rest.iter());
            let a = self.f.row(keep[idx]).transpose();
            let redundant = match lp::maximize(&a, &f, &g) {
                Ok(s) => s.value <= self.g[keep[idx]] + T::tol(tol::REDUNDANT),
                Err(LpError::Unbounded) => false,
                Err(e) => return Err(e.into()),
            };
            active[idx] = !redundant;
        }
        let rows: Vec<usize> = (0..keep.len()).filter(|&j| active[j]).map(|j| keep[j]).collect();
        let out = Self {
            f: self.f.select_rows(rows.iter()),
            g: self.g.select_rows(rows.iter()),
            vertices: self.vertices.clone(),
        };
        debug_assert_eq!(out.dim(), d);
        Ok(out)
    }

    /// Stacks the rows of both sets.
    pub fn intersect(&self, other: &Self) -> Result<Self, GeometryError> {
        check_dim(self.dim(), other.dim())?;
        let d = self.dim();
        let m1 = self.n_halfspaces();
        let m2 = other.n_halfspaces();
        let mut f = DMatrix::zeros(m1 + m2, d);
        f.rows_mut(0, m1).copy_from(&self.f);
        f.rows_mut(m1, m2).copy_from(&other.f);
        let mut g = DVector::zeros(m1 + m2);
        g.rows_mut(0, m1).copy_from(&self.g);
        g.rows_mut(m1, m2).copy_from(&other.g);
        Ok(Self { f, g, vertices: None })
    }

    /// `self × other`.
    pub fn cartesian(&self, other: &Self) -> Self {
        let (m1, d1) = self.f.shape();
        let (m2, d2) = other.f.shape();
        let mut f = DMatrix::zeros(m1 + m2, d1 + d2);
        f.view_mut((0, 0), (m1, d1)).copy_from(&self.f);
        f.view_mut((m1, d1), (m2, d2)).copy_from(&other.f);
        let mut g = DVector::zeros(m1 + m2);
        g.rows_mut(0, m1).copy_from(&self.g);
        g.rows_mut(m1, m2).copy_from(&other.g);
        let vertices = match (&self.vertices, &other.vertices) {
            (Some(a), Some(b)) if d1 + d2 <= tol::MAX_DIM => {
                let mut v = Vec::with_capacity(a.len() * b.len());
                for p in a {
                    for q in b {
                        let mut x = DVector::zeros(d1 + d2);
                        x.rows_mut(0, d1).copy_from(p);
                        x.rows_mut(d1, d2).copy_from(q);
                        v.push(x);
                    }
                }
                Some(v)
            }
            _ => None,
        };
        Self { f, g, vertices }
    }

    /// `{x + t : x ∈ self}`.
    pub fn translate(&self, t: &DVector<T>) -> Self {
        Self {
            g: &self.g + &self.f * t,
            f: self.f.clone(),
            vertices: self.vertices.as_ref().map(|v| v.iter().map(|p| p + t).collect()),
        }
    }

    /// Same normals with new offsets.
    pub fn with_offsets(&self, g: DVector<T>) -> Result<Self, GeometryError> {
        check_dim(self.g.len(), g.len())?;
        Ok(Self {
            f: self.f.clone(),
            g,
            vertices: None,
        })
    }

    /// `self ⊖ s = {x : x + s ⊆ self}`, row by row through support functions.
    pub fn pontryagin_diff<S: SupportFn<T> + ?Sized>(&self, s: &S) -> Result<Self, GeometryError> {
        check_dim(self.dim(), s.dim())?;
        let mut g = self.g.clone();
        for i in 0..self.n_halfspaces() {
            g[i] -= s.support(&self.f.row(i).transpose())?;
        }
        Ok(Self {
            f: self.f.clone(),
            g,
            vertices: None,
        })
    }

    pub fn vertices(&self) -> Result<Vec<DVector<T>>, GeometryError> {
        match &self.vertices {
            Some(v) => Ok(v.clone()),
            None => enumerate_vertices(&self.f, &self.g),
        }
    }

    /// `self ⊕ other` through pairwise vertex sums and a hull.
    pub fn minkowski_sum(&self, other: &Self) -> Result<Self, GeometryError> {
        check_dim(self.dim(), other.dim())?;
        if self.dim() > tol::MAX_DIM {
            return Err(GeometryError::DimensionCap(self.dim()));
        }
        let a = self.vertices()?;
        let b = other.vertices()?;
        if a.is_empty() || b.is_empty() {
            return Ok(Self::empty(self.dim()));
        }
        let mut sums = Vec::with_capacity(a.len() * b.len());
        for p in &a {
            for q in &b {
                sums.push(p + q);
            }
        }
        hull_hrep(&sums)
    }

    /// `{M x : x ∈ self}`.
    pub fn affine_image(&self, m: &DMatrix<T>) -> Result<Self, GeometryError> {
        check_dim(self.dim(), m.ncols())?;
        if m.nrows() > tol::MAX_DIM {
            return Err(GeometryError::DimensionCap(m.nrows()));
        }
        let v = self.vertices()?;
        if v.is_empty() {
            return Ok(Self::empty(m.nrows()));
        }
        let mapped: Vec<DVector<T>> = v.iter().map(|p| m * p).collect();
        hull_hrep(&mapped)
    }

    /// Coordinate projection onto the leading `k` coordinates.
    pub fn project_leading(&self, k: usize) -> Result<Self, GeometryError> {
        let d = self.dim();
        let p = DMatrix::from_fn(k, d, |r, c| if r == c { T::one() } else { T::zero() });
        self.affine_image(&p)
    }

    /// Tight axis-aligned bounds `(lo, hi)`.
    pub fn bounding_box(&self) -> Result<(DVector<T>, DVector<T>), GeometryError> {
        let d = self.dim();
        let mut lo = DVector::zeros(d);
        let mut hi = DVector::zeros(d);
        for k in 0..d {
            let mut e = DVector::zeros(d);
            e[k] = T::one();
            hi[k] = self.support(&e)?;
            lo[k] = -self.support(&-e)?;
        }
        Ok((lo, hi))
    }

    /// Whether `self ⊆ other` (support of `self` along each row of `other`).
    pub fn is_subset_of(&self, other: &Self, tol: T) -> Result<bool, GeometryError> {
        check_dim(self.dim(), other.dim())?;
        for i in 0..other.n_halfspaces() {
            if self.support(&other.f.row(i).transpose())? > other.g[i] + tol {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Converts to another scalar type.
    pub fn cast<U: Real>(&self) -> Polytope<U> {
        let conv = |v: T| U::lit(v.as_f64());
        Polytope {
            f: self.f.map(conv),
            g: self.g.map(conv),
            vertices: self
                .vertices
                .as_ref()
                .map(|vs| vs.iter().map(|p| p.map(conv)).collect()),
        }
    }
}

impl<T: Real> SupportFn<T> for Polytope<T> {
    fn dim(&self) -> usize {
        self.f.ncols()
    }

    fn support(&self, d: &DVector<T>) -> Result<T, GeometryError> {
        check_dim(self.dim(), d.len())?;
        if let Some(v) = &self.vertices {
            if v.is_empty() {
                return Err(LpError::Infeasible(f64::INFINITY).into());
            }
            return Ok(v.iter().map(|p| p.dot(d)).fold(v[0].dot(d), |a, b| a.max(b)));
        }
        Ok(lp::maximize(d, &self.f, &self.g)?.value)
    }
}
