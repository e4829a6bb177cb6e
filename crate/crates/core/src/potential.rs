//! The piecewise-affine optimization potential
//! `φ(x) = b + max_j ψ_j + ⟨η_j, x - x_j⟩`, the barycentric gradient field
//! and the piecewise-constant Hessian field.

use rayon::prelude::*;

use crate::dmaop::{affine_piece, discrete_jacobian, simplex_gradient, DecisionVector};
use crate::error::{invalid, Result};
use crate::linalg::SmallMat;
use crate::mesh::{Mesh, Point};
use crate::Scalar;

/// Absolute tolerance on piece values for reporting the active set.
pub const ACTIVE_TOL: f64 = 1e-10;

const BATCH_TILE: usize = 64;

#[derive(Clone, Debug)]
pub struct OptimizationPotential<T> {
    dim: usize,
    anchors: Vec<T>,
    slopes: Vec<T>,
    values: Vec<T>,
    b: T,
}

/// `-max_j a_j(0)`, the offset making `φ(0) = 0`.
pub fn normalizing_offset<T: Scalar>(mesh: &Mesh<T>, dv: &DecisionVector<T>) -> T {
    let zero = vec![T::zero(); mesh.dim()];
    let m = (0..dv.len())
        .map(|j| affine_piece(dv.psi[j], dv.eta_at(j), mesh.vertex(j), &zero))
        .fold(T::neg_infinity(), T::max);
    -m
}

/// Builds `φ` from a decision vector with `b` chosen so that `φ(0) = 0`.
pub fn build_potential<T: Scalar>(mesh: &Mesh<T>, dv: &DecisionVector<T>) -> Result<OptimizationPotential<T>> {
    dv.check_against(mesh)?;
    OptimizationPotential::from_pieces(mesh.dim(), mesh.coords().to_vec(), dv.psi.clone(), dv.eta.clone())
}

impl<T: Scalar> OptimizationPotential<T> {
    /// Pieces `a_j(x) = values[j] + ⟨slopes_j, x - anchors_j⟩`, normalized to
    /// vanish at the origin.
    pub fn from_pieces(dim: usize, anchors: Vec<T>, values: Vec<T>, slopes: Vec<T>) -> Result<Self> {
        if values.is_empty() || anchors.len() != values.len() * dim || slopes.len() != anchors.len() {
            return invalid("potential needs matching, nonempty anchors, values and slopes");
        }
        let mut p = Self {
            dim,
            anchors,
            slopes,
            values,
            b: T::zero(),
        };
        let zero = vec![T::zero(); dim];
        p.b = -p.max_piece(&zero).0;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_pieces(&self) -> usize {
        self.values.len()
    }

    pub fn b_offset(&self) -> T {
        self.b
    }

    pub fn slope(&self, j: usize) -> &[T] {
        &self.slopes[j * self.dim..(j + 1) * self.dim]
    }

    /// `a_j(x)` without the offset.
    #[inline]
    pub fn piece(&self, j: usize, x: &[T]) -> T {
        let d = self.dim;
        affine_piece(self.values[j], &self.slopes[j * d..(j + 1) * d], &self.anchors[j * d..(j + 1) * d], x)
    }

    fn max_piece(&self, x: &[T]) -> (T, usize) {
        let mut best = (self.piece(0, x), 0);
        for j in 1..self.num_pieces() {
            let v = self.piece(j, x);
            if v > best.0 {
                best = (v, j);
            }
        }
        best
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.b + self.max_piece(x).0
    }

    /// Index of the lowest-index maximizing piece.
    pub fn selector(&self, x: &[T]) -> usize {
        self.max_piece(x).1
    }

    /// Slope of the lowest-index maximizing piece and every piece within
    /// [`ACTIVE_TOL`] of the maximum.
    pub fn subgradient(&self, x: &[T]) -> (Point<T>, Vec<usize>) {
        let (m, j) = self.max_piece(x);
        let tol = T::lit(ACTIVE_TOL);
        let active = (0..self.num_pieces()).filter(|&k| self.piece(k, x) >= m - tol).collect();
        (Point::new(self.slope(j).to_vec()), active)
    }

    /// Evaluates many points. Points are tiled in input order and pieces that
    /// cannot attain the maximum on a tile's bounding box are skipped.
    pub fn eval_batch(&self, points: &[Point<T>]) -> Vec<T> {
        points
            .par_chunks(BATCH_TILE)
            .flat_map_iter(|tile| {
                let keep = self.prefilter(tile);
                tile.iter()
                    .map(|x| {
                        let m = keep.iter().map(|&j| self.piece(j, x)).fold(T::neg_infinity(), T::max);
                        self.b + m
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    fn prefilter(&self, tile: &[Point<T>]) -> Vec<usize> {
        let d = self.dim;
        let mut lo = vec![T::infinity(); d];
        let mut hi = vec![T::neg_infinity(); d];
        for x in tile {
            for k in 0..d {
                lo[k] = lo[k].min(x[k]);
                hi[k] = hi[k].max(x[k]);
            }
        }
        // range of each piece over the box
        let ranges: Vec<(T, T)> = (0..self.num_pieces())
            .map(|j| {
                let s = self.slope(j);
                let a = &self.anchors[j * d..(j + 1) * d];
                let (mut mn, mut mx) = (self.values[j], self.values[j]);
                for k in 0..d {
                    let u = s[k] * (lo[k] - a[k]);
                    let v = s[k] * (hi[k] - a[k]);
                    mn += u.min(v);
                    mx += u.max(v);
                }
                (mn, mx)
            })
            .collect();
        let floor = ranges.iter().map(|r| r.0).fold(T::neg_infinity(), T::max);
        // slack covers rounding in the box bounds
        let slack = T::lit(1e-9) * (T::one() + floor.abs());
        (0..self.num_pieces()).filter(|&j| ranges[j].1 >= floor - slack).collect()
    }
}

/// Barycentric interpolant `G` of the `η` values.
#[derive(Clone, Debug)]
pub struct GradientField<'m, T> {
    mesh: &'m Mesh<T>,
    eta: Vec<T>,
    jacobians: Vec<SmallMat<T>>,
}

pub fn gradient_field<'m, T: Scalar>(mesh: &'m Mesh<T>, dv: &DecisionVector<T>) -> Result<GradientField<'m, T>> {
    dv.check_against(mesh)?;
    let jacobians = (0..mesh.num_simplices())
        .map(|i| simplex_gradient(mesh, i, &dv.eta))
        .collect::<Result<_>>()?;
    Ok(GradientField {
        mesh,
        eta: dv.eta.clone(),
        jacobians,
    })
}

impl<T: Scalar> GradientField<'_, T> {
    /// `J_i = A_i⁻¹ B_i`, so that `G(x) = G(x_{i_0}) + J_iᵀ (x - x_{i_0})`.
    pub fn jacobian(&self, i: usize) -> &SmallMat<T> {
        &self.jacobians[i]
    }

    /// `G` restricted to simplex `i`, evaluated at `x` (extrapolated outside).
    pub fn eval_in(&self, i: usize, x: &[T]) -> Option<Vec<T>> {
        let lam = self.mesh.barycentric(i, x)?;
        let n = self.mesh.dim();
        let mut g = vec![T::zero(); n];
        for (l, &v) in lam.iter().zip(self.mesh.simplex(i)) {
            for c in 0..n {
                g[c] += *l * self.eta[v * n + c];
            }
        }
        Some(g)
    }

    /// `G(x)` using the lowest-index simplex containing `x`.
    pub fn eval(&self, x: &[T]) -> Option<Vec<T>> {
        self.eval_in(self.mesh.locate(x)?, x)
    }
}

/// The locally constant matrix field `H_i`.
#[derive(Clone, Debug)]
pub struct HessianField<T> {
    pub matrices: Vec<SmallMat<T>>,
}

pub fn hessian_field<T: Scalar>(mesh: &Mesh<T>, dv: &DecisionVector<T>) -> Result<HessianField<T>> {
    dv.check_against(mesh)?;
    let matrices = (0..mesh.num_simplices())
        .map(|i| discrete_jacobian(mesh, i, &dv.eta))
        .collect::<Result<_>>()?;
    Ok(HessianField { matrices })
}
