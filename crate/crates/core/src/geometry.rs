//! Planar polygon utilities: orientation, membership, distance, clipping,
//! inward offsetting and ear-clipping triangulation.

use crate::error::{invalid, Result};
use crate::Scalar;

pub type P2<T> = [T; 2];

#[inline]
pub fn sub<T: Scalar>(a: P2<T>, b: P2<T>) -> P2<T> {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn cross<T: Scalar>(a: P2<T>, b: P2<T>) -> T {
    a[0] * b[1] - a[1] * b[0]
}

/// Twice the signed area of triangle `(a, b, c)`; positive when counter-clockwise.
#[inline]
pub fn orient<T: Scalar>(a: P2<T>, b: P2<T>, c: P2<T>) -> T {
    cross(sub(b, a), sub(c, a))
}

#[inline]
pub fn dist<T: Scalar>(a: P2<T>, b: P2<T>) -> T {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Closest point to `p` on segment `[a, b]`.
pub fn closest_on_segment<T: Scalar>(p: P2<T>, a: P2<T>, b: P2<T>) -> P2<T> {
    let ab = sub(b, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == T::zero() {
        return a;
    }
    let t = ((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2;
    let t = t.max(T::zero()).min(T::one());
    [a[0] + t * ab[0], a[1] + t * ab[1]]
}

/// Proper or touching intersection of closed segments `[a, b]` and `[c, d]`.
fn segments_intersect<T: Scalar>(a: P2<T>, b: P2<T>, c: P2<T>, d: P2<T>, tol: T) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > tol && d2 < -tol) || (d1 < -tol && d2 > tol)) && ((d3 > tol && d4 < -tol) || (d3 < -tol && d4 > tol)) {
        return true;
    }
    let on = |p: P2<T>, q: P2<T>, r: P2<T>, o: T| {
        o.abs() <= tol
            && r[0] >= p[0].min(q[0]) - tol
            && r[0] <= p[0].max(q[0]) + tol
            && r[1] >= p[1].min(q[1]) - tol
            && r[1] <= p[1].max(q[1]) + tol
    };
    on(c, d, a, d1) || on(c, d, b, d2) || on(a, b, c, d3) || on(a, b, d, d4)
}

/// A closed polygon given by its vertex loop (the closing edge is implicit).
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon<T> {
    pts: Vec<P2<T>>,
}

impl<T: Scalar> Polygon<T> {
    /// Builds a polygon, dropping an explicit closing vertex equal to the first.
    pub fn new(mut pts: Vec<P2<T>>) -> Self {
        if pts.len() > 1 && pts.first() == pts.last() {
            pts.pop();
        }
        Self { pts }
    }

    pub fn points(&self) -> &[P2<T>] {
        &self.pts
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (P2<T>, P2<T>)> + '_ {
        let n = self.pts.len();
        (0..n).map(move |i| (self.pts[i], self.pts[(i + 1) % n]))
    }

    pub fn signed_area(&self) -> T {
        let half = T::lit(0.5);
        half * self.edges().map(|(a, b)| cross(a, b)).fold(T::zero(), |s, v| s + v)
    }

    pub fn area(&self) -> T {
        self.signed_area().abs()
    }

    pub fn bbox(&self) -> (P2<T>, P2<T>) {
        let mut lo = [T::infinity(); 2];
        let mut hi = [T::neg_infinity(); 2];
        for p in &self.pts {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    pub fn diameter_scale(&self) -> T {
        let (lo, hi) = self.bbox();
        dist(lo, hi)
    }

    /// Counter-clockwise copy.
    pub fn to_ccw(&self) -> Self {
        let mut p = self.clone();
        if p.signed_area() < T::zero() {
            p.pts.reverse();
        }
        p
    }

    /// Checks vertex count, finiteness, distinct vertices, nonzero area and
    /// absence of self-intersections.
    pub fn validate(&self) -> Result<()> {
        let n = self.pts.len();
        if n < 3 {
            return invalid(format!("polygon needs at least 3 vertices, got {n}"));
        }
        if self.pts.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return invalid("polygon has non-finite coordinates");
        }
        let scale = self.diameter_scale();
        let tol = scale * T::lit(1e-12);
        for i in 0..n {
            for j in (i + 1)..n {
                if dist(self.pts[i], self.pts[j]) <= tol {
                    return invalid(format!("polygon vertices {i} and {j} coincide"));
                }
            }
        }
        if self.area() <= scale * scale * T::lit(1e-14) {
            return invalid("polygon has zero area");
        }
        let atol = scale * scale * T::lit(1e-14);
        for i in 0..n {
            let (a, b) = (self.pts[i], self.pts[(i + 1) % n]);
            for j in (i + 2)..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (c, d) = (self.pts[j], self.pts[(j + 1) % n]);
                if segments_intersect(a, b, c, d, atol) {
                    return invalid(format!("polygon edges {i} and {j} intersect"));
                }
            }
        }
        Ok(())
    }

    /// Distance to the boundary and the closest boundary point.
    pub fn boundary_distance(&self, p: P2<T>) -> (T, P2<T>) {
        let mut best = (T::infinity(), p);
        for (a, b) in self.edges() {
            let q = closest_on_segment(p, a, b);
            let d = dist(p, q);
            if d < best.0 {
                best = (d, q);
            }
        }
        best
    }

    /// Closed membership: points within `tol` of the boundary count as inside.
    pub fn contains(&self, p: P2<T>, tol: T) -> bool {
        if self.boundary_distance(p).0 <= tol {
            return true;
        }
        // crossing number
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// True if every turn has the same orientation (collinear turns allowed).
    pub fn is_convex(&self) -> bool {
        let n = self.pts.len();
        let tol = self.diameter_scale().powi(2) * T::lit(1e-14);
        let mut sign = 0i8;
        for i in 0..n {
            let o = orient(self.pts[i], self.pts[(i + 1) % n], self.pts[(i + 2) % n]);
            let s = if o > tol {
                1
            } else if o < -tol {
                -1
            } else {
                0
            };
            if s != 0 {
                if sign != 0 && s != sign {
                    return false;
                }
                sign = s;
            }
        }
        sign != 0
    }

    /// Sutherland–Hodgman clip of this polygon against a convex CCW window.
    /// The result may contain zero-width bridges when the intersection is
    /// disconnected; its area is always correct.
    pub fn clip_convex(&self, window: &[P2<T>]) -> Vec<P2<T>> {
        let mut out = self.pts.clone();
        let m = window.len();
        for k in 0..m {
            if out.is_empty() {
                break;
            }
            let (a, b) = (window[k], window[(k + 1) % m]);
            let input = std::mem::take(&mut out);
            let side = |p: P2<T>| orient(a, b, p);
            for i in 0..input.len() {
                let cur = input[i];
                let prev = input[(i + input.len() - 1) % input.len()];
                let sc = side(cur);
                let sp = side(prev);
                if sc >= T::zero() {
                    if sp < T::zero() {
                        out.push(line_cross(prev, cur, sp, sc));
                    }
                    out.push(cur);
                } else if sp >= T::zero() {
                    out.push(line_cross(prev, cur, sp, sc));
                }
            }
        }
        out
    }

    /// Inward offset by `eps` using mitred corners. Exact for convex
    /// polygons; near reflex corners the mitre slightly under-covers the
    /// rounded offset (an `O(eps²)` area difference).
    pub fn inward_offset(&self, eps: T) -> Polygon<T> {
        if eps == T::zero() {
            return self.to_ccw();
        }
        let p = self.to_ccw();
        let n = p.pts.len();
        // inward normal of a CCW edge (a -> b) is the left normal
        let shifted: Vec<(P2<T>, P2<T>)> = p
            .edges()
            .map(|(a, b)| {
                let d = sub(b, a);
                let len = d[0].hypot(d[1]);
                let nrm = [-d[1] / len * eps, d[0] / len * eps];
                ([a[0] + nrm[0], a[1] + nrm[1]], [b[0] + nrm[0], b[1] + nrm[1]])
            })
            .collect();
        let mut pts = Vec::with_capacity(n);
        for i in 0..n {
            let (a0, a1) = shifted[(i + n - 1) % n];
            let (b0, b1) = shifted[i];
            let da = sub(a1, a0);
            let db = sub(b1, b0);
            let den = cross(da, db);
            if den.abs() <= T::epsilon() * (da[0].hypot(da[1]) * db[0].hypot(db[1])) {
                pts.push(b0);
            } else {
                let t = cross(sub(b0, a0), db) / den;
                pts.push([a0[0] + t * da[0], a0[1] + t * da[1]]);
            }
        }
        let out = Polygon { pts };
        if out.signed_area() <= T::zero() {
            Polygon { pts: Vec::new() }
        } else {
            out
        }
    }
}

fn line_cross<T: Scalar>(p: P2<T>, q: P2<T>, sp: T, sq: T) -> P2<T> {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Shoelace area of an open vertex loop.
pub fn loop_area<T: Scalar>(pts: &[P2<T>]) -> T {
    let n = pts.len();
    if n < 3 {
        return T::zero();
    }
    let s = (0..n).map(|i| cross(pts[i], pts[(i + 1) % n])).fold(T::zero(), |a, b| a + b);
    (s * T::lit(0.5)).abs()
}

fn triangle_quality<T: Scalar>(a: P2<T>, b: P2<T>, c: P2<T>) -> T {
    // 4√3·area / Σ edge², equals 1 for equilateral triangles
    let area = orient(a, b, c) * T::lit(0.5);
    let s = dist(a, b).powi(2) + dist(b, c).powi(2) + dist(c, a).powi(2);
    if s == T::zero() {
        return T::zero();
    }
    T::lit(4.0 * 3f64.sqrt()) * area / s
}

/// Ear-clipping triangulation of a simple CCW loop. Among the valid ears the
/// best-shaped one is clipped first. Collinear vertices are never clipped as
/// ears; if only degenerate ears remain they are emitted with zero area and
/// left for the caller to filter.
pub fn ear_clip<T: Scalar>(pts: &[P2<T>]) -> Vec<[usize; 3]> {
    let n = pts.len();
    let mut out = Vec::new();
    if n < 3 {
        return out;
    }
    let scale = {
        let mut s = T::zero();
        for p in pts {
            s = s.max(dist(*p, pts[0]));
        }
        s
    };
    let tol = scale * scale * T::lit(1e-13);
    let mut idx: Vec<usize> = (0..n).collect();
    while idx.len() > 3 {
        let m = idx.len();
        let mut best: Option<(usize, T)> = None;
        for k in 0..m {
            let (ip, ic, inx) = (idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]);
            let (a, b, c) = (pts[ip], pts[ic], pts[inx]);
            if orient(a, b, c) <= tol {
                continue;
            }
            let blocked = idx.iter().any(|&o| {
                if o == ip || o == ic || o == inx {
                    return false;
                }
                let p = pts[o];
                if p == a || p == b || p == c {
                    return false;
                }
                orient(a, b, p) >= -tol && orient(b, c, p) >= -tol && orient(c, a, p) >= -tol
            });
            if blocked {
                continue;
            }
            let q = triangle_quality(a, b, c);
            if best.is_none_or(|(_, bq)| q > bq) {
                best = Some((k, q));
            }
        }
        let k = match best {
            Some((k, _)) => k,
            None => {
                // degenerate remainder: clip the flattest vertex
                (0..m)
                    .min_by(|&x, &y| {
                        let ox = orient(pts[idx[(x + m - 1) % m]], pts[idx[x]], pts[idx[(x + 1) % m]]).abs();
                        let oy = orient(pts[idx[(y + m - 1) % m]], pts[idx[y]], pts[idx[(y + 1) % m]]).abs();
                        ox.partial_cmp(&oy).unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .unwrap_or(0)
            }
        };
        out.push([idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]]);
        idx.remove(k);
    }
    out.push([idx[0], idx[1], idx[2]]);
    out
}
