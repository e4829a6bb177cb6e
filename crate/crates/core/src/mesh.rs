//! Almost-triangulations of the source domain and the geometric quantities
//! derived from them.

use std::collections::HashMap;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{self, orient, P2, Polygon};
use crate::linalg::{SmallMat, MAX_DIM};
use crate::scalar::factorial;
use crate::Scalar;

/// A point of the ambient space `ℝⁿ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point<T>(pub Vec<T>);

impl<T: Scalar> Point<T> {
    pub fn new(coords: Vec<T>) -> Self {
        Point(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl<T> Deref for Point<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T: Scalar> From<P2<T>> for Point<T> {
    fn from(p: P2<T>) -> Self {
        Point(p.to_vec())
    }
}

/// Geometric summary of an almost-triangulation.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshQualityReport<T> {
    /// Largest simplex diameter.
    pub h_max: T,
    /// Smallest determinant of unit edge-direction matrices (base vertex `i_0`).
    pub r_min: T,
    /// Measure of the `eps`-shrunk domain not covered by simplices; `None`
    /// when the mesh carries no domain polygon.
    pub coverage_gap: Option<T>,
    pub min_volume: T,
}

/// Vertices plus simplices (each an ordered list of `dim + 1` vertex ids,
/// the first one being the base vertex).
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh<T> {
    dim: usize,
    coords: Vec<T>,
    simplices: Vec<usize>,
    polygon: Option<Polygon<T>>,
}

impl<T: Scalar> Mesh<T> {
    /// Builds a mesh from flat coordinates (`N * dim`) and flat simplex
    /// indices (`M * (dim + 1)`). Degenerate simplices are accepted here and
    /// reported by [`Mesh::check_nondegenerate`].
    pub fn new(dim: usize, coords: Vec<T>, simplices: Vec<usize>, polygon: Option<Polygon<T>>) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return invalid(format!("dimension {dim} unsupported (1..={MAX_DIM})"));
        }
        if !coords.len().is_multiple_of(dim) {
            return invalid("coordinate array length is not a multiple of the dimension");
        }
        if !simplices.len().is_multiple_of(dim + 1) {
            return invalid("simplex array length is not a multiple of dim + 1");
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return invalid("vertex coordinates must be finite");
        }
        let n = coords.len() / dim;
        let mut used = vec![false; n];
        for (i, s) in simplices.chunks(dim + 1).enumerate() {
            for (a, &v) in s.iter().enumerate() {
                if v >= n {
                    return invalid(format!("simplex {i} references vertex {v} but mesh has {n}"));
                }
                if s[..a].contains(&v) {
                    return invalid(format!("simplex {i} repeats vertex {v}"));
                }
                used[v] = true;
            }
        }
        if let Some(j) = used.iter().position(|u| !u) {
            return invalid(format!("vertex {j} is not referenced by any simplex"));
        }
        if let Some(p) = &polygon {
            if dim != 2 {
                return invalid("a domain polygon requires a 2-D mesh");
            }
            p.validate()?;
        }
        Ok(Self {
            dim,
            coords,
            simplices,
            polygon,
        })
    }

    pub fn from_points(points: &[Point<T>], simplices: &[Vec<usize>], polygon: Option<Polygon<T>>) -> Result<Self> {
        let dim = points.first().map_or(2, |p| p.dim());
        if points.iter().any(|p| p.dim() != dim) {
            return invalid("vertices have inconsistent dimensions");
        }
        if simplices.iter().any(|s| s.len() != dim + 1) {
            return invalid(format!("every simplex needs {} vertices", dim + 1));
        }
        let coords = points.iter().flat_map(|p| p.0.iter().copied()).collect();
        let flat = simplices.iter().flatten().copied().collect();
        Self::new(dim, coords, flat, polygon)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn num_vertices(&self) -> usize {
        self.coords.len() / self.dim
    }

    #[inline]
    pub fn num_simplices(&self) -> usize {
        self.simplices.len() / (self.dim + 1)
    }

    #[inline]
    pub fn vertex(&self, j: usize) -> &[T] {
        &self.coords[j * self.dim..(j + 1) * self.dim]
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    #[inline]
    pub fn simplex(&self, i: usize) -> &[usize] {
        let k = self.dim + 1;
        &self.simplices[i * k..(i + 1) * k]
    }

    pub fn simplices(&self) -> impl Iterator<Item = &[usize]> {
        self.simplices.chunks(self.dim + 1)
    }

    pub fn polygon(&self) -> Option<&Polygon<T>> {
        self.polygon.as_ref()
    }

    pub fn vertices(&self) -> impl Iterator<Item = &[T]> {
        self.coords.chunks(self.dim)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.num_simplices() {
            return Err(Error::Index {
                kind: "simplex",
                index: i,
                len: self.num_simplices(),
            });
        }
        Ok(())
    }

    /// Row `j` is `x_{i_j} - x_{i_0}`.
    pub fn edge_matrix(&self, i: usize) -> Result<SmallMat<T>> {
        self.check_index(i)?;
        Ok(self.edge_matrix_unchecked(i))
    }

    pub(crate) fn edge_matrix_unchecked(&self, i: usize) -> SmallMat<T> {
        let s = self.simplex(i);
        let x0 = self.vertex(s[0]);
        let mut a = SmallMat::zeros(self.dim);
        for r in 0..self.dim {
            let xr = self.vertex(s[r + 1]);
            for c in 0..self.dim {
                a.set(r, c, xr[c] - x0[c]);
            }
        }
        a
    }

    /// `|det A_i| / n!`.
    pub fn simplex_volume(&self, i: usize) -> Result<T> {
        Ok(self.edge_matrix(i)?.det().abs() / factorial::<T>(self.dim))
    }

    pub fn total_volume(&self) -> T {
        let v: Vec<T> = (0..self.num_simplices())
            .map(|i| self.edge_matrix_unchecked(i).det().abs() / factorial::<T>(self.dim))
            .collect();
        crate::linalg::pairwise_sum(&v)
    }

    pub fn barycenter(&self, i: usize) -> Result<Point<T>> {
        self.check_index(i)?;
        Ok(Point(self.barycenter_unchecked(i)))
    }

    pub(crate) fn barycenter_unchecked(&self, i: usize) -> Vec<T> {
        let s = self.simplex(i);
        let mut c = vec![T::zero(); self.dim];
        for &v in s {
            for (ck, &xk) in c.iter_mut().zip(self.vertex(v)) {
                *ck += xk;
            }
        }
        let k = T::from_count(self.dim + 1);
        c.iter_mut().for_each(|v| *v /= k);
        c
    }

    pub fn diameter(&self, i: usize) -> Result<T> {
        self.check_index(i)?;
        let s = self.simplex(i);
        let mut d = T::zero();
        for a in 0..s.len() {
            for b in (a + 1)..s.len() {
                d = d.max(crate::linalg::norm(&diff(self.vertex(s[a]), self.vertex(s[b]))));
            }
        }
        Ok(d)
    }

    /// `|det(u_1 … u_n)|` with `u_j` the unit edge directions from the base vertex.
    pub fn regularity(&self, i: usize) -> Result<T> {
        let a = self.edge_matrix(i)?;
        let mut u = a;
        for r in 0..self.dim {
            let len = crate::linalg::norm(a.row(r));
            if len == T::zero() {
                return Ok(T::zero());
            }
            for c in 0..self.dim {
                u.set(r, c, a.get(r, c) / len);
            }
        }
        Ok(u.det().abs())
    }

    /// Errors with the first simplex whose edge matrix is singular.
    pub fn check_nondegenerate(&self) -> Result<()> {
        for i in 0..self.num_simplices() {
            let d = self.edge_matrix_unchecked(i).det();
            if d == T::zero() || !d.is_finite() {
                return Err(Error::DegenerateSimplex {
                    simplex: i,
                    det: d.as_f64(),
                });
            }
        }
        Ok(())
    }

    pub fn quality(&self, eps: T) -> Result<MeshQualityReport<T>> {
        if !(eps >= T::zero()) {
            return invalid("boundary band width must be non-negative");
        }
        let m = self.num_simplices();
        let mut h_max = T::zero();
        let mut r_min = T::infinity();
        let mut min_volume = T::infinity();
        for i in 0..m {
            h_max = h_max.max(self.diameter(i)?);
            r_min = r_min.min(self.regularity(i)?);
            min_volume = min_volume.min(self.simplex_volume(i)?);
        }
        if m == 0 {
            r_min = T::zero();
            min_volume = T::zero();
        }
        let coverage_gap = self.polygon.as_ref().map(|poly| {
            let shrunk = poly.inward_offset(eps);
            if shrunk.is_empty() {
                return T::zero();
            }
            let covered: Vec<T> = (0..m)
                .map(|i| {
                    let s = self.simplex(i);
                    let mut tri: Vec<P2<T>> = s.iter().map(|&v| p2(self.vertex(v))).collect();
                    if orient(tri[0], tri[1], tri[2]) < T::zero() {
                        tri.reverse();
                    }
                    geometry::loop_area(&shrunk.clip_convex(&tri))
                })
                .collect();
            (shrunk.area() - crate::linalg::pairwise_sum(&covered)).max(T::zero())
        });
        Ok(MeshQualityReport {
            h_max,
            r_min,
            coverage_gap,
            min_volume,
        })
    }

    /// Barycentric coordinates of `x` with respect to simplex `i`
    /// (`None` for a degenerate simplex).
    pub fn barycentric(&self, i: usize, x: &[T]) -> Option<Vec<T>> {
        let a = self.edge_matrix_unchecked(i);
        let inv_t = a.inverse()?.transpose();
        let x0 = self.vertex(self.simplex(i)[0]);
        let rel = diff(x, x0);
        let lam = inv_t.mul_vec(&rel);
        let mut out = Vec::with_capacity(self.dim + 1);
        let rest: T = lam[..self.dim].iter().fold(T::zero(), |s, &v| s + v);
        out.push(T::one() - rest);
        out.extend_from_slice(&lam[..self.dim]);
        Some(out)
    }

    /// Lowest-index simplex containing `x` (barycentric coordinates `>= -tol`).
    pub fn locate(&self, x: &[T]) -> Option<usize> {
        if x.len() != self.dim {
            return None;
        }
        let tol = T::epsilon() * T::lit(1e4);
        (0..self.num_simplices()).find(|&i| {
            self.barycentric(i, x)
                .is_some_and(|lam| lam.iter().all(|&l| l >= -tol))
        })
    }

    /// True if the origin lies in the domain polygon (or, without a polygon,
    /// in some simplex).
    pub fn contains_origin(&self) -> bool {
        let zero = vec![T::zero(); self.dim];
        match &self.polygon {
            Some(p) => p.contains([T::zero(), T::zero()], p.diameter_scale() * T::lit(1e-10)),
            None => self.locate(&zero).is_some(),
        }
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Mesh<U> {
        let c = |v: &T| U::lit(v.as_f64());
        Mesh {
            dim: self.dim,
            coords: self.coords.iter().map(c).collect(),
            simplices: self.simplices.clone(),
            polygon: self
                .polygon
                .as_ref()
                .map(|p| Polygon::new(p.points().iter().map(|q| [c(&q[0]), c(&q[1])]).collect())),
        }
    }

    /// Applies `x ↦ R x + t` to every vertex (and the polygon), keeping connectivity.
    pub fn transformed(&self, map: impl Fn(&[T]) -> Vec<T>) -> Self {
        let coords = self.vertices().flat_map(&map).collect();
        let polygon = self
            .polygon
            .as_ref()
            .map(|p| Polygon::new(p.points().iter().map(|q| p2(&map(q))).collect()));
        Self {
            dim: self.dim,
            coords,
            simplices: self.simplices.clone(),
            polygon,
        }
    }
}

pub(crate) fn diff<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

#[inline]
fn p2<T: Scalar>(v: &[T]) -> P2<T> {
    [v[0], v[1]]
}

/// Deduplicates vertices within a tolerance using a hashed lattice.
struct VertexPool<T> {
    cell: T,
    pts: Vec<P2<T>>,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl<T: Scalar> VertexPool<T> {
    fn new(cell: T) -> Self {
        Self {
            cell,
            pts: Vec::new(),
            buckets: HashMap::new(),
        }
    }

    fn key(&self, p: P2<T>) -> (i64, i64) {
        let k = |v: T| (v / self.cell).floor().to_i64().unwrap_or(0);
        (k(p[0]), k(p[1]))
    }

    fn insert(&mut self, p: P2<T>) -> usize {
        let (kx, ky) = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = self.buckets.get(&(kx + dx, ky + dy)) {
                    for &id in ids {
                        if geometry::dist(self.pts[id], p) <= self.cell {
                            return id;
                        }
                    }
                }
            }
        }
        let id = self.pts.len();
        self.pts.push(p);
        self.buckets.entry((kx, ky)).or_default().push(id);
        id
    }
}

/// Rotates a CCW triangle so that its base vertex has the largest angle sine.
fn best_base<T: Scalar>(t: [usize; 3], pts: &[P2<T>]) -> [usize; 3] {
    let sine = |k: usize| {
        let (a, b, c) = (pts[t[k]], pts[t[(k + 1) % 3]], pts[t[(k + 2) % 3]]);
        let area2 = orient(a, b, c).abs();
        area2 / (geometry::dist(a, b) * geometry::dist(a, c))
    };
    let mut best = 0;
    let mut bs = sine(0);
    for k in 1..3 {
        let s = sine(k);
        if s > bs * (T::one() + T::lit(1e-12)) {
            best = k;
            bs = s;
        }
    }
    [t[best], t[(best + 1) % 3], t[(best + 2) % 3]]
}

/// Structured grid-overlay mesher for a simple polygon.
///
/// The bounding box is covered by `ceil(width / h) × ceil(height / h)` cells;
/// lattice nodes within a quarter cell of the boundary are snapped onto it
/// (onto a corner when one is that close). Each cell is split into two
/// right triangles with the right-angle vertex as base. Triangles fully
/// inside the polygon are kept, triangles straddling the boundary are
/// clipped against the polygon and the pieces re-triangulated, so polygon
/// corners become mesh vertices.
pub fn triangulate_polygon<T: Scalar>(polygon: &Polygon<T>, h: T) -> Result<Mesh<T>> {
    if !(h > T::zero()) || !h.is_finite() {
        return invalid("target edge length h must be positive and finite");
    }
    polygon.validate()?;
    let poly = polygon.to_ccw();
    let scale = poly.diameter_scale();
    let tol = scale * T::lit(1e-10);
    if !poly.contains([T::zero(), T::zero()], tol) {
        return invalid("domain polygon must contain the origin");
    }
    let (lo, hi) = poly.bbox();
    let cells = |len: T| -> usize {
        let c = (len / h - T::lit(1e-9)).ceil().to_usize().unwrap_or(1);
        c.max(1)
    };
    let (nx, ny) = (cells(hi[0] - lo[0]), cells(hi[1] - lo[1]));
    let hx = (hi[0] - lo[0]) / T::from_count(nx);
    let hy = (hi[1] - lo[1]) / T::from_count(ny);
    let coord = |i: usize, n: usize, l: T, u: T, step: T| if i == n { u } else { l + T::from_count(i) * step };

    let snap_tol = T::lit(0.25) * hx.min(hy);
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let p = [coord(i, nx, lo[0], hi[0], hx), coord(j, ny, lo[1], hi[1], hy)];
            let (d, q) = poly.boundary_distance(p);
            let snapped = if d > T::zero() && d <= snap_tol {
                poly.points()
                    .iter()
                    .copied()
                    .filter(|c| geometry::dist(*c, p) <= snap_tol)
                    .min_by(|a, b| {
                        geometry::dist(*a, p)
                            .partial_cmp(&geometry::dist(*b, p))
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .unwrap_or(q)
            } else {
                p
            };
            nodes.push(snapped);
        }
    }
    let node = |i: usize, j: usize| nodes[j * (nx + 1) + i];

    let min_area = T::lit(1e-8) * hx * hy;
    let mut pool = VertexPool::new(scale * T::lit(1e-9));
    let mut tris: Vec<[usize; 3]> = Vec::new();
    let corner_on_edge = |tri: &[P2<T>; 3]| {
        poly.points().iter().any(|c| {
            tri.iter().all(|v| geometry::dist(*v, *c) > tol)
                && (0..3).any(|k| {
                    let (a, b) = (tri[k], tri[(k + 1) % 3]);
                    geometry::dist(geometry::closest_on_segment(*c, a, b), *c) <= tol
                })
        })
    };
    for j in 0..ny {
        for i in 0..nx {
            let (p00, p10, p11, p01) = (node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1));
            for tri in [[p10, p11, p00], [p01, p00, p11]] {
                let full = orient(tri[0], tri[1], tri[2]) * T::lit(0.5);
                if full <= min_area {
                    continue;
                }
                let clipped = poly.clip_convex(&tri);
                let area = geometry::loop_area(&clipped);
                if area <= min_area {
                    continue;
                }
                if area >= full * (T::one() - T::lit(1e-10)) && !corner_on_edge(&tri) {
                    let ids = [pool.insert(tri[0]), pool.insert(tri[1]), pool.insert(tri[2])];
                    tris.push(ids);
                    continue;
                }
                let mut piece: Vec<P2<T>> = Vec::with_capacity(clipped.len());
                for p in clipped {
                    if piece.last().is_none_or(|q| geometry::dist(*q, p) > pool.cell) {
                        piece.push(p);
                    }
                }
                while piece.len() > 1 && geometry::dist(piece[0], piece[piece.len() - 1]) <= pool.cell {
                    piece.pop();
                }
                if piece.len() < 3 {
                    continue;
                }
                for t in geometry::ear_clip(&piece) {
                    let (a, b, c) = (piece[t[0]], piece[t[1]], piece[t[2]]);
                    if orient(a, b, c) * T::lit(0.5) <= min_area {
                        continue;
                    }
                    tris.push([pool.insert(a), pool.insert(b), pool.insert(c)]);
                }
            }
        }
    }
    if tris.is_empty() {
        return invalid("mesher produced no simplices; reduce h");
    }
    let pts = pool.pts;
    let tris: Vec<[usize; 3]> = tris
        .into_iter()
        .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
        .map(|t| best_base(t, &pts))
        .collect();
    // compact vertices in order of first use
    let mut remap = vec![usize::MAX; pts.len()];
    let mut coords = Vec::new();
    let mut flat = Vec::with_capacity(tris.len() * 3);
    for t in &tris {
        for &v in t {
            if remap[v] == usize::MAX {
                remap[v] = coords.len() / 2;
                coords.extend_from_slice(&pts[v]);
            }
            flat.push(remap[v]);
        }
    }
    Mesh::new(2, coords, flat, Some(polygon.clone()))
}
