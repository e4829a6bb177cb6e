//! Transport maps extracted from a solution, discrete optimality checks and
//! the mesh-refinement study harness.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dmaop::{discrete_jacobian, eta_mean, root_det, DecisionVector};
use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, pairwise_sum};
use crate::mesh::{Mesh, Point};
use crate::potential::build_potential;
use crate::problem::{Density, ProblemInstance};
use crate::scalar::factorial;
use crate::solver::{solve, SolverOptions};
use crate::Scalar;

/// Largest map size handled by exhaustive enumeration.
pub const MAX_EXHAUSTIVE: usize = 9;
/// Costs at or below this value make the log-log slope undefined.
pub const SLOPE_COST_FLOOR: f64 = 1e-6;
/// Resolution of the sup-error evaluation grid.
pub const STUDY_GRID: usize = 50;

/// Source vertices paired with their images.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMap<T> {
    pub sources: Vec<Point<T>>,
    pub targets: Vec<Point<T>>,
}

impl<T: Scalar> DiscreteMap<T> {
    pub fn new(sources: Vec<Point<T>>, targets: Vec<Point<T>>) -> Result<Self> {
        if sources.len() != targets.len() {
            return invalid(format!("{} sources but {} targets", sources.len(), targets.len()));
        }
        if sources.iter().chain(&targets).any(|p| p.dim() != sources[0].dim()) {
            return invalid("map points have mixed dimensions");
        }
        Ok(Self { sources, targets })
    }

    pub fn from_solution(mesh: &Mesh<T>, dv: &DecisionVector<T>) -> Result<Self> {
        dv.check_against(mesh)?;
        Self::new(
            mesh.vertices().map(|x| Point::new(x.to_vec())).collect(),
            (0..dv.len()).map(|j| Point::new(dv.eta_at(j).to_vec())).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

/// `(1 - t) x_j + t η_j` for every vertex.
pub fn displacement<T: Scalar>(mesh: &Mesh<T>, dv: &DecisionVector<T>, t: T) -> Result<Vec<Point<T>>> {
    if !(t >= T::zero() && t <= T::one()) {
        return invalid(format!("displacement time {t} outside [0, 1]"));
    }
    dv.check_against(mesh)?;
    Ok((0..dv.len())
        .map(|j| {
            let x = mesh.vertex(j);
            let y = dv.eta_at(j);
            let p = if t == T::zero() {
                x.to_vec()
            } else if t == T::one() {
                y.to_vec()
            } else {
                x.iter().zip(y).map(|(a, b)| (T::one() - t) * *a + t * *b).collect()
            };
            Point::new(p)
        })
        .collect())
}

/// `Σ_i V_i |-(det H_i)^{1/n} + (f(x̄_i)/g(η̄_i))^{1/n}|`.
pub fn two_sided_cost<T: Scalar>(mesh: &Mesh<T>, eta: &[T], f: &Density<T>, g: &Density<T>) -> Result<T> {
    let n = mesh.dim();
    let nf = factorial::<T>(n);
    let terms = (0..mesh.num_simplices())
        .map(|i| {
            let h = discrete_jacobian(mesh, i, eta)?;
            let d = root_det(&h).map_err(|what| Error::Domain { simplex: i, what })?;
            let lf = f.log_eval(&mesh.barycenter_unchecked(i))?;
            let lg = g.log_eval(&eta_mean(mesh, i, eta))?;
            let r = ((lf - lg) / T::from_count(n)).exp();
            let v = mesh.edge_matrix_unchecked(i).det().abs() / nf;
            Ok(v * (r - d).abs())
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(pairwise_sum(&terms))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentVerdict<T> {
    pub optimal: bool,
    pub best_cost: T,
    pub identity_cost: T,
}

/// Exhaustive search over all permutations of the targets. The identity is
/// optimal when its cost is within `1e-12` (relative) of the minimum.
pub fn assignment_oracle<T: Scalar>(map: &DiscreteMap<T>) -> Result<AssignmentVerdict<T>> {
    let n = map.len();
    if n > MAX_EXHAUSTIVE {
        return invalid(format!(
            "{n} pairs exceed the exhaustive limit of {MAX_EXHAUSTIVE}; use the cyclical check instead"
        ));
    }
    let cost: Vec<Vec<T>> = map
        .sources
        .iter()
        .map(|x| {
            map.targets
                .iter()
                .map(|y| x.iter().zip(y.iter()).map(|(a, b)| (*a - *b) * (*a - *b)).sum())
                .collect()
        })
        .collect();
    let total = |perm: &[usize]| -> T { perm.iter().enumerate().map(|(j, &k)| cost[j][k]).sum() };
    let mut perm: Vec<usize> = (0..n).collect();
    let identity_cost = total(&perm);
    let mut best = identity_cost;
    // Heap's algorithm, iterative form
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(total(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    let tol = T::lit(1e-12) * (T::one() + best.abs());
    Ok(AssignmentVerdict {
        optimal: identity_cost <= best + tol,
        best_cost: best,
        identity_cost,
    })
}

/// Largest `Σ_k ⟨η_{j_k}, x_{j_{k+1}} - x_{j_k}⟩` over `trials` random
/// cycles of length `2..=max_len` (distinct indices when possible).
pub fn cyclical_check<T: Scalar>(map: &DiscreteMap<T>, max_len: usize, trials: usize, seed: u64) -> Result<T> {
    if max_len < 2 {
        return invalid("cycles need at least two elements");
    }
    let n = map.len();
    if n < 2 {
        return Ok(T::zero());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = T::neg_infinity();
    let mut diff = vec![T::zero(); map.sources[0].dim()];
    for _ in 0..trials {
        let m = rng.gen_range(2..=max_len);
        let cycle: Vec<usize> = if m <= n {
            sample(&mut rng, n, m).into_vec()
        } else {
            (0..m).map(|_| rng.gen_range(0..n)).collect()
        };
        let mut s = T::zero();
        for k in 0..m {
            let a = cycle[k];
            let b = cycle[(k + 1) % m];
            for (c, d) in diff.iter_mut().enumerate() {
                *d = map.sources[b][c] - map.sources[a][c];
            }
            s += dot(&map.targets[a], &diff);
        }
        worst = worst.max(s);
    }
    Ok(worst)
}

/// Closed-form Brenier potentials for analytic test families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePotential {
    /// `|x|²/2`, the identity map.
    Identity,
    /// `Σ_k s_k x_k² / 2`, the map `x ↦ (s_1 x_1, ..., s_n x_n)`.
    Scaling { factors: Vec<f64> },
    /// `⟨v, x⟩ + |x|²/2`, the map `x ↦ x + v`.
    Translation { shift: Vec<f64> },
}

impl ReferencePotential {
    pub fn value_grad<T: Scalar>(&self, x: &[T]) -> (T, Vec<T>) {
        let half = T::lit(0.5);
        match self {
            Self::Identity => (half * dot(x, x), x.to_vec()),
            Self::Scaling { factors } => {
                let g: Vec<T> = x.iter().zip(factors).map(|(v, s)| T::lit(*s) * *v).collect();
                (half * dot(&g, x), g)
            }
            Self::Translation { shift } => {
                let v: Vec<T> = shift.iter().map(|s| T::lit(*s)).collect();
                let g = x.iter().zip(&v).map(|(a, b)| *a + *b).collect();
                (dot(&v, x) + half * dot(x, x), g)
            }
        }
    }

    pub fn value<T: Scalar>(&self, x: &[T]) -> T {
        self.value_grad(x).0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow<T> {
    pub n: usize,
    pub h: T,
    pub cost: T,
    pub two_sided: T,
    pub sup_err: Option<T>,
    pub runtime_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyOutcome<T> {
    pub rows: Vec<StudyRow<T>>,
    /// Least-squares slope of `log cost` against `log N`.
    pub slope: Option<T>,
    /// Set when a level failed; `rows` then holds the completed levels.
    pub failure: Option<String>,
}

/// Points of a `res × res` cell-centered grid over the bounding box of the
/// source polygon that lie inside it.
pub fn evaluation_grid<T: Scalar>(mesh: &Mesh<T>, res: usize) -> Vec<Point<T>> {
    let Some(poly) = mesh.polygon() else {
        return Vec::new();
    };
    let (lo, hi) = poly.bbox();
    let mut pts = Vec::new();
    for iy in 0..res {
        for ix in 0..res {
            let fx = (T::from_count(ix) + T::lit(0.5)) / T::from_count(res);
            let fy = (T::from_count(iy) + T::lit(0.5)) / T::from_count(res);
            let p = [lo[0] + fx * (hi[0] - lo[0]), lo[1] + fy * (hi[1] - lo[1])];
            if poly.contains(p, T::zero()) {
                pts.push(Point::from(p));
            }
        }
    }
    pts
}

/// `max |φ - φ_ref|` over the evaluation grid, both vanishing at the origin.
pub fn sup_error<T: Scalar>(mesh: &Mesh<T>, dv: &DecisionVector<T>, reference: &ReferencePotential) -> Result<T> {
    let phi = build_potential(mesh, dv)?;
    let pts = evaluation_grid(mesh, STUDY_GRID);
    if pts.is_empty() {
        return invalid("sup error needs a mesh with a source polygon");
    }
    let zero = vec![T::zero(); mesh.dim()];
    let r0 = reference.value(&zero);
    let vals = phi.eval_batch(&pts);
    Ok(pts
        .iter()
        .zip(vals)
        .map(|(x, v)| (v - (reference.value(x) - r0)).abs())
        .fold(T::zero(), T::max))
}

/// Least-squares slope of `log y` against `log x`; `None` when fewer than two
/// points or any `y <= floor`.
pub fn loglog_slope<T: Scalar>(x: &[T], y: &[T], floor: T) -> Option<T> {
    if x.len() < 2 || x.len() != y.len() || y.iter().any(|v| *v <= floor) {
        return None;
    }
    let lx: Vec<T> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<T> = y.iter().map(|v| v.ln()).collect();
    let k = T::from_count(x.len());
    let mx = lx.iter().copied().sum::<T>() / k;
    let my = ly.iter().copied().sum::<T>() / k;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    for (a, b) in lx.iter().zip(&ly) {
        sxy += (*a - mx) * (*b - my);
        sxx += (*a - mx) * (*a - mx);
    }
    (sxx > T::zero()).then(|| sxy / sxx)
}

/// Meshes, solves and measures the problem at every `h`.
pub fn convergence_study<T: Scalar>(
    instance_for: impl Fn(T) -> Result<ProblemInstance<T>>,
    opts: &SolverOptions,
    h_list: &[T],
    reference: Option<&ReferencePotential>,
) -> Result<StudyOutcome<T>> {
    if h_list.len() < 3 {
        return invalid("a study needs at least three mesh sizes");
    }
    if h_list.windows(2).any(|w| !(w[1] < w[0])) {
        return invalid("mesh sizes must be strictly decreasing");
    }
    let mut rows = Vec::new();
    let mut failure = None;
    for &h in h_list {
        let start = Instant::now();
        let run = || -> Result<StudyRow<T>> {
            let inst = instance_for(h)?;
            let (sol, _) = solve(&inst, opts)?;
            let two_sided = two_sided_cost(&inst.mesh, &sol.dv.eta, &inst.f, &inst.g)?;
            let sup_err = reference.map(|r| sup_error(&inst.mesh, &sol.dv, r)).transpose()?;
            Ok(StudyRow {
                n: inst.mesh.num_vertices(),
                h,
                cost: sol.cost,
                two_sided,
                sup_err,
                runtime_s: start.elapsed().as_secs_f64(),
            })
        };
        match run() {
            Ok(row) => rows.push(row),
            Err(e) => {
                failure = Some(format!("h = {h}: {e}"));
                break;
            }
        }
    }
    let ns: Vec<T> = rows.iter().map(|r| T::from_count(r.n)).collect();
    let costs: Vec<T> = rows.iter().map(|r| r.cost).collect();
    let slope = if failure.is_none() {
        loglog_slope(&ns, &costs, T::lit(SLOPE_COST_FLOOR))
    } else {
        None
    };
    Ok(StudyOutcome { rows, slope, failure })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmaop::{objective, restriction_data, Variant};
    use crate::geometry::Polygon;
    use crate::mesh::triangulate_polygon;

    fn square(h: f64) -> Mesh<f64> {
        triangulate_polygon(&Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]), h).unwrap()
    }

    fn pts(v: &[[f64; 2]]) -> Vec<Point<f64>> {
        v.iter().map(|p| Point::from(*p)).collect()
    }

    #[test]
    fn displacement_endpoints_and_midpoints() {
        let m = square(0.25);
        let dv = restriction_data(&m, |x| (0.0, vec![2.0 * x[0] + 0.1, x[1] - 0.3]));
        let d0 = displacement(&m, &dv, 0.0).unwrap();
        let d1 = displacement(&m, &dv, 1.0).unwrap();
        for j in 0..m.num_vertices() {
            assert_eq!(&d0[j][..], m.vertex(j));
            assert_eq!(&d1[j][..], dv.eta_at(j));
        }
        let id = restriction_data(&m, |x| (0.0, x.to_vec()));
        let half = displacement(&m, &id, 0.5).unwrap();
        for j in 0..m.num_vertices() {
            assert_eq!(&half[j][..], m.vertex(j));
        }
        assert!(displacement(&m, &dv, 1.5).is_err());
        assert!(displacement(&m, &dv, -0.1).is_err());
    }

    #[test]
    fn two_sided_examples() {
        let m = square(0.2);
        let one = Density::uniform(1.0);
        let id = restriction_data(&m, |x| (0.0, x.to_vec()));
        assert!(two_sided_cost(&m, &id.eta, &one, &one).unwrap() < 1e-12);
        // unit-volume simplex in the plane: right triangle with legs √2
        let s = 2f64.sqrt();
        let tri = Mesh::new(2, vec![0.0, 0.0, s, 0.0, 0.0, s], vec![0, 1, 2], None).unwrap();
        let eta = vec![0.0, 0.0, 4.0 * s, 0.0, 0.0, s];
        let c = two_sided_cost(&tri, &eta, &one, &one).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        assert_eq!(objective(&tri, &eta, &one, &one, Variant::Dmaop).unwrap(), 0.0);
    }

    #[test]
    fn oracle_examples() {
        let src = pts(&[[0.0, 0.0], [1.0, 0.2], [0.3, 1.0], [0.8, 0.9]]);
        let m = [[1.5, 0.3], [0.3, 0.7]];
        let tgt: Vec<Point<f64>> = src
            .iter()
            .map(|x| Point::new(vec![m[0][0] * x[0] + m[0][1] * x[1], m[1][0] * x[0] + m[1][1] * x[1]]))
            .collect();
        let map = DiscreteMap::new(src.clone(), tgt.clone()).unwrap();
        let v = assignment_oracle(&map).unwrap();
        assert!(v.optimal);
        assert!(v.identity_cost <= v.best_cost + 1e-12);

        let mut swapped = tgt;
        swapped.swap(0, 3);
        let v = assignment_oracle(&DiscreteMap::new(src, swapped).unwrap()).unwrap();
        assert!(!v.optimal);
        assert!(v.best_cost < v.identity_cost);

        let single = DiscreteMap::new(pts(&[[0.3, 0.1]]), pts(&[[5.0, 2.0]])).unwrap();
        assert!(assignment_oracle(&single).unwrap().optimal);

        let big = DiscreteMap::new(pts(&[[0.0, 0.0]; 10]), pts(&[[0.0, 0.0]; 10])).unwrap();
        assert!(assignment_oracle(&big).is_err());
    }

    #[test]
    fn oracle_matches_hand_count_on_three() {
        // 3! permutations; the reverse pairing is the unique optimum
        let map = DiscreteMap::new(pts(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), pts(&[[2.0, 0.0], [1.0, 0.0], [0.0, 0.0]])).unwrap();
        let v = assignment_oracle(&map).unwrap();
        assert_eq!(v.identity_cost, 8.0);
        assert_eq!(v.best_cost, 0.0);
        assert!(!v.optimal);
    }

    #[test]
    fn cyclical_examples() {
        let m = square(0.2);
        let dv = restriction_data(&m, |x| (0.0, vec![(x[0] + 0.2 * x[1]).exp(), 0.2 * (x[0] + 0.2 * x[1]).exp() + x[1]]));
        let map = DiscreteMap::from_solution(&m, &dv).unwrap();
        assert!(cyclical_check(&map, 5, 10_000, 4).unwrap() <= 0.0);

        let anti = DiscreteMap::new(pts(&[[0.0, 0.0], [1.0, 0.0]]), pts(&[[0.0, 0.0], [-1.0, 0.0]])).unwrap();
        // ⟨η₁ - η₂, x₂ - x₁⟩ = |x₂ - x₁|² for η = -x
        assert!((cyclical_check(&anti, 2, 10, 0).unwrap() - 1.0).abs() < 1e-15);

        let one = DiscreteMap::new(pts(&[[0.2, 0.5]]), pts(&[[1.0, 1.0]])).unwrap();
        assert_eq!(cyclical_check(&one, 5, 10, 0).unwrap(), 0.0);
        assert!(cyclical_check(&one, 1, 10, 0).is_err());
    }

    #[test]
    fn cyclical_check_is_seeded() {
        let m = square(0.25);
        let dv = restriction_data(&m, |x| (0.0, vec![x[1], -x[0]]));
        let map = DiscreteMap::from_solution(&m, &dv).unwrap();
        let a = cyclical_check(&map, 4, 500, 9).unwrap();
        assert_eq!(a, cyclical_check(&map, 4, 500, 9).unwrap());
    }

    #[test]
    fn reference_potentials() {
        let x = [0.3f64, -0.7];
        let (v, g) = ReferencePotential::Scaling { factors: vec![2.0, 1.0] }.value_grad(&x);
        assert!((v - (0.09 + 0.245)).abs() < 1e-15);
        assert_eq!(g, vec![0.6, -0.7]);
        let (v, g) = ReferencePotential::Translation { shift: vec![1.0, 2.0] }.value_grad(&x);
        assert!((v - (0.3 - 1.4 + 0.29)).abs() < 1e-15);
        assert_eq!(g, vec![1.3, 1.3]);
    }

    #[test]
    fn slope_fit() {
        let x = [100.0f64, 400.0, 1600.0];
        let y = [0.1, 0.05, 0.025];
        assert!((loglog_slope(&x, &y, 1e-6).unwrap() + 0.5).abs() < 1e-12);
        assert!(loglog_slope(&x, &[0.1, 1e-7, 0.01], 1e-6).is_none());
    }

    #[test]
    fn evaluation_grid_covers_square() {
        assert_eq!(evaluation_grid(&square(0.5), 50).len(), 2500);
    }
}
