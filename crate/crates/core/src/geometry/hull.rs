//! Vertex enumeration by the double-description method and facet
//! enumeration through polar duality. Both are meant for dimension ≤ 4.

use nalgebra::{DMatrix, DVector};

use super::lp::{self, LpError};
use super::{tol, GeometryError, Polytope};
use crate::scalar::Real;

struct Vertex<T: Real> {
    x: DVector<T>,
    /// sorted indices of the constraints tight at `x`
    active: Vec<usize>,
}

fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

fn is_subset_sorted(small: &[usize], big: &[usize]) -> bool {
    let mut j = 0;
    for &s in small {
        while j < big.len() && big[j] < s {
            j += 1;
        }
        if j == big.len() || big[j] != s {
            return false;
        }
        j += 1;
    }
    true
}

fn dedup_points<T: Real>(points: &[DVector<T>], eps: T) -> Vec<DVector<T>> {
    let mut out: Vec<DVector<T>> = Vec::with_capacity(points.len());
    for p in points {
        if !out.iter().any(|q| (q - p).amax() <= eps) {
            out.push(p.clone());
        }
    }
    out
}

/// All vertices of the bounded polyhedron `{x : A x ≤ b}`.
///
/// Returns an empty list for an empty set and an error for an unbounded one.
pub fn enumerate_vertices<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> Result<Vec<DVector<T>>, GeometryError> {
    let (m, d) = a.shape();
    if d > tol::MAX_DIM {
        return Err(GeometryError::DimensionCap(d));
    }
    if d == 0 {
        return Ok(Vec::new());
    }
    let mut lo = DVector::zeros(d);
    let mut hi = DVector::zeros(d);
    for k in 0..d {
        let mut e = DVector::zeros(d);
        e[k] = T::one();
        match lp::maximize(&e, a, b) {
            Ok(s) => hi[k] = s.value,
            Err(LpError::Infeasible(_)) => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        }
        e[k] = -T::one();
        lo[k] = -lp::maximize(&e, a, b)?.value;
    }
    let scale = lo.amax().max(hi.amax()) + T::one();
    let extent = (&hi - &lo).amax();
    let pad = extent * T::lit(0.1) + scale * T::lit(1e-3);
    let zero_tol = T::tol(1e-9) * scale;

    // start from the padded bounding box; box constraint ids follow the m real rows
    let mut verts: Vec<Vertex<T>> = Vec::with_capacity(1 << d);
    for mask in 0..(1usize << d) {
        let mut x = DVector::zeros(d);
        let mut active = Vec::with_capacity(d);
        for k in 0..d {
            if mask >> k & 1 == 1 {
                x[k] = hi[k] + pad;
                active.push(m + 2 * k);
            } else {
                x[k] = lo[k] - pad;
                active.push(m + 2 * k + 1);
            }
        }
        active.sort_unstable();
        verts.push(Vertex { x, active });
    }

    for i in 0..m {
        let row = a.row(i).transpose();
        let s: Vec<T> = verts.iter().map(|v| row.dot(&v.x) - b[i]).collect();
        let plus: Vec<usize> = (0..verts.len()).filter(|&j| s[j] > zero_tol).collect();
        if plus.is_empty() {
            for (j, v) in verts.iter_mut().enumerate() {
                if s[j].abs() <= zero_tol {
                    v.active.push(i);
                    v.active.sort_unstable();
                }
            }
            continue;
        }
        let minus: Vec<usize> = (0..verts.len()).filter(|&j| s[j] < -zero_tol).collect();
        let mut fresh: Vec<Vertex<T>> = Vec::new();
        for &p in &plus {
            for &q in &minus {
                let common = intersect_sorted(&verts[p].active, &verts[q].active);
                if common.len() + 1 < d {
                    continue;
                }
                let adjacent =
                    (0..verts.len()).all(|u| u == p || u == q || !is_subset_sorted(&common, &verts[u].active));
                if !adjacent {
                    continue;
                }
                let t = s[q] / (s[q] - s[p]);
                let x = &verts[q].x + (&verts[p].x - &verts[q].x) * t;
                let mut active = common;
                active.push(i);
                active.sort_unstable();
                fresh.push(Vertex { x, active });
            }
        }
        let mut next: Vec<Vertex<T>> = Vec::with_capacity(verts.len() + fresh.len());
        for (j, mut v) in verts.into_iter().enumerate() {
            if s[j] > zero_tol {
                continue;
            }
            if s[j] >= -zero_tol {
                v.active.push(i);
                v.active.sort_unstable();
            }
            next.push(v);
        }
        // numerically coincident vertices are merged with the union of their active sets
        for v in fresh {
            if let Some(w) = next.iter_mut().find(|w| (&w.x - &v.x).amax() <= zero_tol) {
                let mut u = w.active.clone();
                u.extend(v.active);
                u.sort_unstable();
                u.dedup();
                w.active = u;
            } else {
                next.push(v);
            }
        }
        verts = next;
    }

    let kept: Vec<DVector<T>> = verts
        .into_iter()
        .filter(|v| v.active.iter().all(|&id| id < m))
        .map(|v| v.x)
        .collect();
    Ok(dedup_points(&kept, T::tol(tol::DEDUP)))
}

/// Minimal H-representation of the convex hull of `points`, with the extreme
/// points attached as cached vertices.
///
/// Lower-dimensional clouds are handled in their affine hull; the missing
/// directions become paired inequalities of half-width `tol::FLAT` plus the
/// residual spread of the points.
pub fn hull_hrep<T: Real>(points: &[DVector<T>]) -> Result<Polytope<T>, GeometryError> {
    let Some(first) = points.first() else {
        return Err(GeometryError::Empty);
    };
    let d = first.len();
    if d > tol::MAX_DIM {
        return Err(GeometryError::DimensionCap(d));
    }
    for p in points {
        super::check_dim(d, p.len())?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
    }
    let pts = dedup_points(points, T::tol(tol::DEDUP));
    let n = pts.len();
    let mut c = DVector::zeros(d);
    for p in &pts {
        c += p;
    }
    c /= T::lit(n as f64);
    let q = DMatrix::from_fn(n, d, |r, k| pts[r][k] - c[k]);

    // principal directions of the cloud, sorted by decreasing spread
    let (sigma, v) = if n > 1 {
        let svd = q.clone().svd(false, true);
        let vt = svd.v_t.expect("right singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&x, &y| {
            svd.singular_values[y]
                .partial_cmp(&svd.singular_values[x])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut basis = DMatrix::zeros(d, d);
        let mut sig = vec![T::zero(); d];
        for (col, &o) in order.iter().enumerate() {
            basis.set_column(col, &vt.row(o).transpose());
            sig[col] = svd.singular_values[o];
        }
        // complete the basis when there are fewer points than dimensions
        if order.len() < d {
            let mut filled = order.len();
            for k in 0..d {
                if filled == d {
                    break;
                }
                let mut e = DVector::zeros(d);
                e[k] = T::one();
                for col in 0..filled {
                    let b = basis.column(col).clone_owned();
                    e -= &b * b.dot(&e);
                }
                let nrm = e.norm();
                if nrm > T::lit(1e-6) {
                    basis.set_column(filled, &(e / nrm));
                    filled += 1;
                }
            }
        }
        (sig, basis)
    } else {
        (vec![T::zero(); d], DMatrix::identity(d, d))
    };
    let smax = sigma.first().copied().unwrap_or(T::zero());
    let cutoff = smax * T::tol(tol::FLAT_REL);
    let r = sigma
        .iter()
        .take_while(|s| **s > cutoff && **s > T::tol(tol::DEDUP) * T::lit(1e-3))
        .count();

    let vr = v.columns(0, r).clone_owned();
    let rms: Vec<T> = (0..r).map(|k| sigma[k] / T::lit(n as f64).sqrt()).collect();
    // whitened local coordinates
    let xi: Vec<DVector<T>> = (0..n)
        .map(|j| {
            let loc = vr.transpose() * q.row(j).transpose();
            DVector::from_fn(r, |k, _| loc[k] / rms[k])
        })
        .collect();

    let (local_rows, local_offsets, extreme) = local_hull(&xi, r)?;

    let n_flat = d - r;
    let m = local_rows.len() + 2 * n_flat;
    let mut f = DMatrix::zeros(m, d);
    let mut g = DVector::zeros(m);
    for (idx, (a, beta)) in local_rows.iter().zip(local_offsets.iter()).enumerate() {
        let scaled = DVector::from_fn(r, |k, _| a[k] / rms[k]);
        let normal = &vr * scaled;
        g[idx] = *beta + normal.dot(&c);
        f.row_mut(idx).copy_from(&normal.transpose());
    }
    for k in 0..n_flat {
        let u = v.column(r + k).clone_owned();
        let spread = (0..n)
            .map(|j| u.dot(&q.row(j).transpose()).abs())
            .fold(T::zero(), |a, b| a.max(b));
        let band = spread + T::tol(tol::FLAT);
        let uc = u.dot(&c);
        let row = local_rows.len() + 2 * k;
        f.row_mut(row).copy_from(&u.transpose());
        g[row] = uc + band;
        f.row_mut(row + 1).copy_from(&(-&u).transpose());
        g[row + 1] = -uc + band;
    }
    let vertices: Vec<DVector<T>> = extreme.into_iter().map(|j| pts[j].clone()).collect();
    Ok(Polytope::new(f, g)?.with_vertices(vertices))
}

/// Hull of a full-dimensional cloud in `R^r` centred near the origin.
/// Returns facet normals, offsets, and indices of the extreme points.
#[allow(clippy::type_complexity)]
fn local_hull<T: Real>(xi: &[DVector<T>], r: usize) -> Result<(Vec<DVector<T>>, Vec<T>, Vec<usize>), GeometryError> {
    let n = xi.len();
    match r {
        0 => Ok((Vec::new(), Vec::new(), vec![0])),
        1 => {
            let (mut imin, mut imax) = (0, 0);
            for j in 0..n {
                if xi[j][0] < xi[imin][0] {
                    imin = j;
                }
                if xi[j][0] > xi[imax][0] {
                    imax = j;
                }
            }
            Ok((
                vec![DVector::from_element(1, T::one()), DVector::from_element(1, -T::one())],
                vec![xi[imax][0], -xi[imin][0]],
                vec![imin, imax],
            ))
        }
        _ => {
            // facets of conv(xi) are the vertices of the polar {y : xiᵀ y ≤ 1}
            let a = DMatrix::from_fn(n, r, |j, k| xi[j][k]);
            let b = DVector::from_element(n, T::one());
            let polar = enumerate_vertices(&a, &b)?;
            if polar.is_empty() {
                return Err(GeometryError::Empty);
            }
            let act = T::tol(1e-7);
            let mut extreme = Vec::new();
            for j in 0..n {
                let touching: Vec<&DVector<T>> = polar
                    .iter()
                    .filter(|y| (xi[j].dot(y) - T::one()).abs() <= act)
                    .collect();
                if touching.len() < r {
                    continue;
                }
                let mtx = DMatrix::from_fn(touching.len(), r, |p, k| touching[p][k]);
                let sv = mtx.svd(false, false).singular_values;
                let top = sv.iter().fold(T::zero(), |x, y| x.max(*y));
                let rank = sv.iter().filter(|s| **s > top * T::tol(1e-8)).count();
                if rank == r {
                    extreme.push(j);
                }
            }
            let offsets = vec![T::one(); polar.len()];
            Ok((polar, offsets, extreme))
        }
    }
}
