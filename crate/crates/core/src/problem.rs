//! Source/target measures: densities, the convex target domain, and the
//! mass-balanced problem instance.

use crate::dmaop::Variant;
use crate::error::{invalid, Result};
use crate::geometry::{self, Polygon, P2};
use crate::linalg::{pairwise_sum, SmallMat, MAX_DIM};
use crate::mesh::{Mesh, Point};
use crate::Scalar;

/// Samples per axis of the midpoint rule used for non-uniform target integrals.
pub const TARGET_QUADRATURE_RES: usize = 512;

/// Relative floor used when none is given: `1e-3 · peak`.
pub const DEFAULT_FLOOR_RATIO: f64 = 1e-3;

/// Bilinearly interpolated samples on an axis-aligned lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity<T> {
    pub lo: P2<T>,
    pub hi: P2<T>,
    /// samples per axis
    pub nx: usize,
    pub ny: usize,
    /// row-major, row 0 at `lo[1]`
    pub samples: Vec<T>,
    pub floor: T,
}

impl<T: Scalar> GridDensity<T> {
    pub fn new(lo: P2<T>, hi: P2<T>, nx: usize, ny: usize, samples: Vec<T>, floor: Option<T>) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return invalid("grid density needs at least 2 samples per axis");
        }
        if samples.len() != nx * ny {
            return invalid(format!("grid density expects {} samples, got {}", nx * ny, samples.len()));
        }
        if !(hi[0] > lo[0] && hi[1] > lo[1]) {
            return invalid("grid density bounds are empty");
        }
        if let Some(k) = samples.iter().position(|v| !v.is_finite() || *v < T::zero()) {
            return invalid(format!("grid density sample {k} is {}", samples[k]));
        }
        let peak = samples.iter().copied().fold(T::zero(), T::max);
        let floor = floor.unwrap_or(peak * T::lit(DEFAULT_FLOOR_RATIO));
        if !(floor > T::zero()) {
            return invalid("grid density floor must be positive");
        }
        Ok(Self {
            lo,
            hi,
            nx,
            ny,
            samples,
            floor,
        })
    }

    /// Parses `xmin,xmax,ymin,ymax` followed by `ny` rows of `nx` samples.
    pub fn from_csv(text: &str, floor: Option<T>) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let parse_row = |l: &str| -> Result<Vec<T>> {
            l.split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map(T::lit)
                        .map_err(|e| crate::Error::InvalidInput(format!("grid csv: {e} in {s:?}")))
                })
                .collect()
        };
        let header = match lines.next() {
            Some(h) => parse_row(h)?,
            None => return invalid("grid csv is empty"),
        };
        if header.len() != 4 {
            return invalid("grid csv header must be xmin,xmax,ymin,ymax");
        }
        let mut rows = Vec::new();
        for l in lines {
            rows.push(parse_row(l)?);
        }
        let ny = rows.len();
        let nx = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != nx) {
            return invalid("grid csv rows have unequal lengths");
        }
        Self::new(
            [header[0], header[2]],
            [header[1], header[3]],
            nx,
            ny,
            rows.into_iter().flatten().collect(),
            floor,
        )
    }

    fn cell(&self, x: &[T]) -> Result<(usize, usize, T, T, T, T)> {
        let tol = T::lit(1e-12) * (self.hi[0] - self.lo[0]).max(self.hi[1] - self.lo[1]);
        if x.len() != 2
            || x[0] < self.lo[0] - tol
            || x[0] > self.hi[0] + tol
            || x[1] < self.lo[1] - tol
            || x[1] > self.hi[1] + tol
            || !x[0].is_finite()
            || !x[1].is_finite()
        {
            return invalid(format!("grid density queried outside its lattice at {x:?}"));
        }
        let dx = (self.hi[0] - self.lo[0]) / T::from_count(self.nx - 1);
        let dy = (self.hi[1] - self.lo[1]) / T::from_count(self.ny - 1);
        let u = ((x[0] - self.lo[0]) / dx).max(T::zero());
        let v = ((x[1] - self.lo[1]) / dy).max(T::zero());
        let i = u.floor().to_usize().unwrap_or(0).min(self.nx - 2);
        let j = v.floor().to_usize().unwrap_or(0).min(self.ny - 2);
        let s = (u - T::from_count(i)).min(T::one());
        let t = (v - T::from_count(j)).min(T::one());
        Ok((i, j, s, t, dx, dy))
    }

    fn corners(&self, i: usize, j: usize) -> [T; 4] {
        let at = |i: usize, j: usize| self.samples[j * self.nx + i];
        [at(i, j), at(i + 1, j), at(i, j + 1), at(i + 1, j + 1)]
    }

    /// Bilinear value before flooring.
    pub fn bilinear(&self, x: &[T]) -> Result<T> {
        let (i, j, s, t, _, _) = self.cell(x)?;
        let [a, b, c, d] = self.corners(i, j);
        let one = T::one();
        Ok(a * (one - s) * (one - t) + b * s * (one - t) + c * (one - s) * t + d * s * t)
    }

    /// log, gradient of log and Hessian of log of the floored interpolant.
    fn log_derivs(&self, x: &[T]) -> Result<(T, [T; MAX_DIM], SmallMat<T>)> {
        let (i, j, s, t, dx, dy) = self.cell(x)?;
        let [a, b, c, d] = self.corners(i, j);
        let one = T::one();
        let val = a * (one - s) * (one - t) + b * s * (one - t) + c * (one - s) * t + d * s * t;
        let mut g = [T::zero(); MAX_DIM];
        let mut h = SmallMat::zeros(2);
        if !(val > self.floor) {
            return Ok((self.floor.ln(), g, h));
        }
        let gx = ((b - a) * (one - t) + (d - c) * t) / dx;
        let gy = ((c - a) * (one - s) + (d - b) * s) / dy;
        let gxy = (a - b - c + d) / (dx * dy);
        g[0] = gx / val;
        g[1] = gy / val;
        h.set(0, 0, -g[0] * g[0]);
        h.set(1, 1, -g[1] * g[1]);
        let off = gxy / val - g[0] * g[1];
        h.set(0, 1, off);
        h.set(1, 0, off);
        Ok((val.ln(), g, h))
    }
}

/// Shape of a density before the positive `scale` multiplier.
#[derive(Clone, Debug, PartialEq)]
pub enum DensityKind<T> {
    /// Constant 1.
    Uniform,
    /// `max(peak · exp(-½ Σ ((x-c)/σ)²), floor)`.
    GaussianFloored {
        center: Vec<T>,
        sigma: Vec<T>,
        peak: T,
        floor: T,
    },
    Grid(GridDensity<T>),
}

/// A strictly positive density `scale · kind(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Density<T> {
    pub kind: DensityKind<T>,
    pub scale: T,
}

impl<T: Scalar> Density<T> {
    pub fn uniform(height: T) -> Self {
        Self {
            kind: DensityKind::Uniform,
            scale: height,
        }
    }

    pub fn gaussian(center: Vec<T>, sigma: Vec<T>, peak: T, floor: Option<T>) -> Result<Self> {
        if center.len() != sigma.len() || center.is_empty() {
            return invalid("gaussian center and sigma must have equal, nonzero length");
        }
        if sigma.iter().any(|s| !(*s > T::zero())) || !(peak > T::zero()) {
            return invalid("gaussian sigma and peak must be positive");
        }
        let floor = floor.unwrap_or(peak * T::lit(DEFAULT_FLOOR_RATIO));
        if !(floor > T::zero()) {
            return invalid("gaussian floor must be positive");
        }
        Ok(Self {
            kind: DensityKind::GaussianFloored {
                center,
                sigma,
                peak,
                floor,
            },
            scale: T::one(),
        })
    }

    pub fn grid(grid: GridDensity<T>) -> Self {
        Self {
            kind: DensityKind::Grid(grid),
            scale: T::one(),
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.kind, DensityKind::Uniform)
    }

    pub fn eval(&self, x: &[T]) -> Result<T> {
        let base = match &self.kind {
            DensityKind::Uniform => T::one(),
            DensityKind::GaussianFloored {
                center,
                sigma,
                peak,
                floor,
            } => {
                let q = gaussian_quad(x, center, sigma)?;
                (*peak * (-T::lit(0.5) * q).exp()).max(*floor)
            }
            DensityKind::Grid(g) => g.bilinear(x)?.max(g.floor),
        };
        Ok(self.scale * base)
    }

    pub fn log_eval(&self, x: &[T]) -> Result<T> {
        Ok(self.log_derivs(x)?.0)
    }

    /// `(log ρ(x), ∇ log ρ(x), ∇² log ρ(x))`, piecewise where the floor is active.
    pub fn log_derivs(&self, x: &[T]) -> Result<(T, [T; MAX_DIM], SmallMat<T>)> {
        let ls = self.scale.ln();
        let n = x.len().clamp(1, MAX_DIM);
        match &self.kind {
            DensityKind::Uniform => Ok((ls, [T::zero(); MAX_DIM], SmallMat::zeros(n))),
            DensityKind::GaussianFloored {
                center,
                sigma,
                peak,
                floor,
            } => {
                let q = gaussian_quad(x, center, sigma)?;
                let log_g = peak.ln() - T::lit(0.5) * q;
                let mut g = [T::zero(); MAX_DIM];
                let mut h = SmallMat::zeros(n);
                if log_g <= floor.ln() {
                    return Ok((ls + floor.ln(), g, h));
                }
                for k in 0..n {
                    let s2 = sigma[k] * sigma[k];
                    g[k] = -(x[k] - center[k]) / s2;
                    h.set(k, k, -T::one() / s2);
                }
                Ok((ls + log_g, g, h))
            }
            DensityKind::Grid(grid) => {
                let (l, g, h) = grid.log_derivs(x)?;
                Ok((ls + l, g, h))
            }
        }
    }
}

fn gaussian_quad<T: Scalar>(x: &[T], center: &[T], sigma: &[T]) -> Result<T> {
    if x.len() != center.len() {
        return invalid("gaussian density queried with wrong dimension");
    }
    Ok(x.iter()
        .zip(center)
        .zip(sigma)
        .map(|((&xi, &ci), &si)| ((xi - ci) / si).powi(2))
        .fold(T::zero(), |a, b| a + b))
}

/// Convex, bounded target domain.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetDomain<T> {
    /// Euclidean ball (a disc in the plane).
    Disc { center: Vec<T>, radius: T },
    /// Convex polygon with unit-normal half-spaces `a_m · y <= b_m`.
    Polygon {
        polygon: Polygon<T>,
        halfspaces: Vec<([T; 2], T)>,
    },
}

impl<T: Scalar> TargetDomain<T> {
    pub fn disc(center: Vec<T>, radius: T) -> Result<Self> {
        if !(radius > T::zero()) || !radius.is_finite() {
            return invalid("disc radius must be positive");
        }
        if center.is_empty() || center.len() > MAX_DIM || center.iter().any(|c| !c.is_finite()) {
            return invalid("disc center must be a finite point");
        }
        Ok(Self::Disc { center, radius })
    }

    pub fn polygon(pts: Vec<P2<T>>) -> Result<Self> {
        let p = Polygon::new(pts);
        p.validate()?;
        if !p.is_convex() {
            return invalid("target polygon must be convex");
        }
        let p = p.to_ccw();
        let halfspaces = p
            .edges()
            .filter_map(|(a, b)| {
                let d = geometry::sub(b, a);
                let len = d[0].hypot(d[1]);
                (len > T::zero()).then(|| {
                    let nrm = [d[1] / len, -d[0] / len];
                    (nrm, nrm[0] * a[0] + nrm[1] * a[1])
                })
            })
            .collect();
        Ok(Self::Polygon { polygon: p, halfspaces })
    }

    /// Axis-aligned rectangle `[lo, hi]` as a polygon target.
    pub fn rectangle(lo: P2<T>, hi: P2<T>) -> Result<Self> {
        Self::polygon(vec![lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]])
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Disc { center, .. } => center.len(),
            Self::Polygon { .. } => 2,
        }
    }

    /// Distance outside the domain; 0 iff `y` lies in the closure.
    pub fn violation(&self, y: &[T]) -> T {
        match self {
            Self::Disc { center, radius } => {
                let d = crate::linalg::norm(&crate::mesh::diff(y, center));
                (d - *radius).max(T::zero())
            }
            Self::Polygon { halfspaces, .. } => halfspaces
                .iter()
                .map(|(a, b)| (a[0] * y[0] + a[1] * y[1] - *b).max(T::zero()))
                .fold(T::zero(), T::max),
        }
    }

    pub fn contains(&self, y: &[T]) -> bool {
        self.violation(y) == T::zero()
    }

    /// Euclidean projection onto the closed domain.
    pub fn projection(&self, y: &[T]) -> Point<T> {
        match self {
            Self::Disc { center, radius } => {
                let rel = crate::mesh::diff(y, center);
                let d = crate::linalg::norm(&rel);
                if d <= *radius {
                    Point(y.to_vec())
                } else {
                    Point(center.iter().zip(&rel).map(|(&c, &r)| c + r * *radius / d).collect())
                }
            }
            Self::Polygon { polygon, .. } => {
                if self.contains(y) {
                    return Point(y.to_vec());
                }
                let p = [y[0], y[1]];
                let mut best = (T::infinity(), p);
                for (a, b) in polygon.edges() {
                    let q = geometry::closest_on_segment(p, a, b);
                    let d = geometry::dist(p, q);
                    if d < best.0 {
                        best = (d, q);
                    }
                }
                Point(best.1.to_vec())
            }
        }
    }

    /// An interior point and the radius of a ball around it inside the domain
    /// (disc: centre and radius; polygon: area centroid and its distance to
    /// the nearest edge line).
    pub fn interior_ball(&self) -> (Vec<T>, T) {
        match self {
            Self::Disc { center, radius } => (center.clone(), *radius),
            Self::Polygon { polygon, halfspaces } => {
                let a = polygon.signed_area();
                let mut c = [T::zero(); 2];
                for (p, q) in polygon.edges() {
                    let w = geometry::cross(p, q);
                    c[0] += (p[0] + q[0]) * w;
                    c[1] += (p[1] + q[1]) * w;
                }
                let k = T::lit(6.0) * a;
                let c = [c[0] / k, c[1] / k];
                let r = halfspaces
                    .iter()
                    .map(|(n, b)| *b - (n[0] * c[0] + n[1] * c[1]))
                    .fold(T::infinity(), T::min);
                (c.to_vec(), r)
            }
        }
    }

    /// Lebesgue measure of the domain.
    pub fn volume(&self) -> T {
        match self {
            Self::Disc { center, radius } => match center.len() {
                1 => T::lit(2.0) * *radius,
                2 => T::lit(std::f64::consts::PI) * radius.powi(2),
                _ => T::lit(4.0 / 3.0 * std::f64::consts::PI) * radius.powi(3),
            },
            Self::Polygon { polygon, .. } => polygon.area(),
        }
    }

    pub fn bbox(&self) -> (Vec<T>, Vec<T>) {
        match self {
            Self::Disc { center, radius } => (
                center.iter().map(|&c| c - *radius).collect(),
                center.iter().map(|&c| c + *radius).collect(),
            ),
            Self::Polygon { polygon, .. } => {
                let (lo, hi) = polygon.bbox();
                (lo.to_vec(), hi.to_vec())
            }
        }
    }

    /// Boundary outline for rendering (discs sampled with `segments` points).
    pub fn outline(&self, segments: usize) -> Vec<P2<T>> {
        match self {
            Self::Disc { center, radius } => (0..segments)
                .map(|k| {
                    let th = T::lit(2.0 * std::f64::consts::PI * k as f64 / segments as f64);
                    [center[0] + *radius * th.cos(), center[1] + *radius * th.sin()]
                })
                .collect(),
            Self::Polygon { polygon, .. } => polygon.points().to_vec(),
        }
    }
}

/// Everything defining one discrete problem.
#[derive(Clone, Debug)]
pub struct ProblemInstance<T> {
    pub mesh: Mesh<T>,
    pub target: TargetDomain<T>,
    pub f: Density<T>,
    pub g: Density<T>,
    pub variant: Variant,
}

impl<T: Scalar> ProblemInstance<T> {
    pub fn new(mesh: Mesh<T>, target: TargetDomain<T>, f: Density<T>, g: Density<T>, variant: Variant) -> Result<Self> {
        if target.dim() != mesh.dim() {
            return invalid(format!(
                "target dimension {} does not match mesh dimension {}",
                target.dim(),
                mesh.dim()
            ));
        }
        Ok(Self {
            mesh,
            target,
            f,
            g,
            variant,
        })
    }

    /// `Σ_i V_i f(x̄_i)`.
    pub fn source_mass(&self) -> Result<T> {
        let m = &self.mesh;
        let terms = (0..m.num_simplices())
            .map(|i| Ok(m.simplex_volume(i)? * self.f.eval(&m.barycenter_unchecked(i))?))
            .collect::<Result<Vec<T>>>()?;
        Ok(pairwise_sum(&terms))
    }

    /// Closed form for uniform `g`, otherwise a midpoint rule over the target's
    /// bounding box restricted to the domain.
    pub fn target_mass(&self) -> Result<T> {
        if self.g.is_uniform() {
            return Ok(self.g.scale * self.target.volume());
        }
        let (lo, hi) = self.target.bbox();
        let dim = lo.len();
        let res = if dim == 2 { TARGET_QUADRATURE_RES } else { 128 };
        let steps: Vec<T> = lo.iter().zip(&hi).map(|(&l, &h)| (h - l) / T::from_count(res)).collect();
        let cell_vol = steps.iter().fold(T::one(), |a, &b| a * b);
        let total = res.pow(dim as u32);
        let half = T::lit(0.5);
        let terms = (0..total)
            .map(|flat| {
                let mut rem = flat;
                let mut y = Vec::with_capacity(dim);
                for k in 0..dim {
                    let idx = rem % res;
                    rem /= res;
                    y.push(lo[k] + (T::from_count(idx) + half) * steps[k]);
                }
                if self.target.contains(&y) {
                    self.g.eval(&y)
                } else {
                    Ok(T::zero())
                }
            })
            .collect::<Result<Vec<T>>>()?;
        Ok(pairwise_sum(&terms) * cell_vol)
    }

    /// Rescales `g` so that both measures carry the same mass.
    pub fn mass_normalize(mut self) -> Result<Self> {
        let mf = self.source_mass()?;
        let mg = self.target_mass()?;
        if !(mf > T::zero()) || !mf.is_finite() {
            return invalid(format!("source density integrates to {mf}"));
        }
        if !(mg > T::zero()) || !mg.is_finite() {
            return invalid(format!("target density integrates to {mg}"));
        }
        self.g.scale *= mf / mg;
        Ok(self)
    }
}
