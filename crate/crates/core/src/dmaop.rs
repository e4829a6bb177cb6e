//! The discrete Monge–Ampère optimization problem: discrete Jacobians,
//! per-simplex penalties, the objective and constraint residuals.
//!
//! Decision variables are the potential values `ψ_j` and subgradients `η_j`
//! at the mesh vertices. For simplex `S_i` with vertices `x_{i_0..i_n}`,
//! `A_i` has rows `x_{i_k} - x_{i_0}`, `B_i` rows `η_{i_k} - η_{i_0}`, and
//! `H_i = sym(A_i⁻¹ B_i)`. With `x̄_i`, `η̄_i` the vertex means, the signed
//! penalty argument is
//!
//! ```text
//! LDMAOP:  -log det H_i - log g(η̄_i) + log f(x̄_i)
//! DMAOP:   -(det H_i)^{1/n} + (f(x̄_i) / g(η̄_i))^{1/n}
//! ```
//!
//! and the objective is `Σ_i V_i max{0, argument_i}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{pairwise_sum, SmallMat};
use crate::mesh::Mesh;
use crate::problem::{Density, TargetDomain};
use crate::scalar::factorial;
use crate::Scalar;

/// Eigenvalues in `(-PSD_CLAMP, 0)` count as zero in the DMAOP penalty.
pub const PSD_CLAMP: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Logarithmic form; requires `det H_i > 0`.
    Ldmaop,
    /// `n`-th root form; requires `H_i ⪰ 0`.
    Dmaop,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Ldmaop => "ldmaop",
            Variant::Dmaop => "dmaop",
        })
    }
}

/// Potential values and subgradients at the mesh vertices. `eta` is stored
/// flat (`N * dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionVector<T> {
    dim: usize,
    pub psi: Vec<T>,
    pub eta: Vec<T>,
}

impl<T: Scalar> DecisionVector<T> {
    pub fn new(dim: usize, psi: Vec<T>, eta: Vec<T>) -> Result<Self> {
        if eta.len() != psi.len() * dim {
            return invalid(format!(
                "eta has {} entries, expected {} x {dim}",
                eta.len(),
                psi.len()
            ));
        }
        Ok(Self { dim, psi, eta })
    }

    pub fn zeros(dim: usize, n: usize) -> Self {
        Self {
            dim,
            psi: vec![T::zero(); n],
            eta: vec![T::zero(); n * dim],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    #[inline]
    pub fn eta_at(&self, j: usize) -> &[T] {
        &self.eta[j * self.dim..(j + 1) * self.dim]
    }

    pub fn check_against(&self, mesh: &Mesh<T>) -> Result<()> {
        if self.dim != mesh.dim() || self.len() != mesh.num_vertices() {
            return invalid(format!(
                "decision vector ({} points in {}-D) does not match mesh ({} vertices in {}-D)",
                self.len(),
                self.dim,
                mesh.num_vertices(),
                mesh.dim()
            ));
        }
        Ok(())
    }
}

/// Worst violations of the three constraint families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResiduals<T> {
    /// `max_{i≠j} ψ_i + ⟨η_i, x_j - x_i⟩ - ψ_j`; `<= 0` means feasible.
    pub hyperplane_max: T,
    /// `max_j` distance of `η_j` outside the target.
    pub target_max: T,
    /// Smallest eigenvalue over all discrete Jacobians.
    pub min_eig_h: T,
}

/// `ψ_i + ⟨η_i, x - x_i⟩`, the affine piece anchored at vertex `i`.
///
/// Every feasibility test and potential evaluation goes through this one
/// expression so that they agree bit for bit.
#[inline]
pub fn affine_piece<T: Scalar>(psi_i: T, eta_i: &[T], x_i: &[T], x: &[T]) -> T {
    let mut s = T::zero();
    for k in 0..x.len() {
        s += eta_i[k] * (x[k] - x_i[k]);
    }
    psi_i + s
}

/// `A_i⁻¹ B_i` from a precomputed `A_i⁻¹`.
pub(crate) fn jacobian_with<T: Scalar>(ainv: &SmallMat<T>, s: &[usize], eta: &[T], dim: usize) -> SmallMat<T> {
    let e0 = &eta[s[0] * dim..(s[0] + 1) * dim];
    let mut b = SmallMat::zeros(dim);
    for r in 0..dim {
        let er = &eta[s[r + 1] * dim..(s[r + 1] + 1) * dim];
        for c in 0..dim {
            b.set(r, c, er[c] - e0[c]);
        }
    }
    ainv.mul(&b)
}

fn ainv_of<T: Scalar>(mesh: &Mesh<T>, i: usize) -> Result<SmallMat<T>> {
    let a = mesh.edge_matrix(i)?;
    a.inverse().ok_or_else(|| Error::DegenerateSimplex {
        simplex: i,
        det: a.det().as_f64(),
    })
}

fn check_eta<T: Scalar>(mesh: &Mesh<T>, eta: &[T]) -> Result<()> {
    if eta.len() != mesh.num_vertices() * mesh.dim() {
        return invalid(format!(
            "eta has {} entries, mesh needs {}",
            eta.len(),
            mesh.num_vertices() * mesh.dim()
        ));
    }
    Ok(())
}

/// Unsymmetrized `J_i = A_i⁻¹ B_i` (the gradient of the barycentric
/// interpolant of `η` on `S_i`).
pub fn simplex_gradient<T: Scalar>(mesh: &Mesh<T>, i: usize, eta: &[T]) -> Result<SmallMat<T>> {
    check_eta(mesh, eta)?;
    let ainv = ainv_of(mesh, i)?;
    Ok(jacobian_with(&ainv, mesh.simplex(i), eta, mesh.dim()))
}

/// `H_i = ½ A_i⁻¹B_i + ½ (A_i⁻¹B_i)ᵀ`.
pub fn discrete_jacobian<T: Scalar>(mesh: &Mesh<T>, i: usize, eta: &[T]) -> Result<SmallMat<T>> {
    Ok(simplex_gradient(mesh, i, eta)?.sym())
}

/// `(det H)^{1/n}` with the PSD clamp; errors when `H` is clearly indefinite.
pub fn root_det<T: Scalar>(h: &SmallMat<T>) -> std::result::Result<T, String> {
    let n = h.dim();
    let lam_min = h.min_eigenvalue();
    if lam_min <= -T::lit(PSD_CLAMP) {
        return Err(format!("H is not positive semidefinite (min eigenvalue {:e})", lam_min.as_f64()));
    }
    if lam_min < T::zero() {
        return Ok(T::zero());
    }
    let d = h.det().max(T::zero());
    Ok(if n == 2 { d.sqrt() } else { d.powf(T::one() / T::from_count(n)) })
}

/// Signed penalty argument from `H`, `log f(x̄)` and `log g(η̄)`.
pub fn penalty_argument<T: Scalar>(variant: Variant, h: &SmallMat<T>, log_f: T, log_g: T) -> std::result::Result<T, String> {
    let n = T::from_count(h.dim());
    match variant {
        Variant::Ldmaop => {
            let d = h.det();
            if !(d > T::zero()) {
                return Err(format!("log det H undefined (det H = {:e})", d.as_f64()));
            }
            Ok(-d.ln() - log_g + log_f)
        }
        Variant::Dmaop => Ok(-root_det(h)? + ((log_f - log_g) / n).exp()),
    }
}

/// `max{0, argument}` for simplex `i`.
pub fn penalty<T: Scalar>(mesh: &Mesh<T>, i: usize, eta: &[T], f: &Density<T>, g: &Density<T>, variant: Variant) -> Result<T> {
    let h = discrete_jacobian(mesh, i, eta)?;
    let log_f = f.log_eval(&mesh.barycenter_unchecked(i))?;
    let log_g = g.log_eval(&eta_mean(mesh, i, eta))?;
    let arg = penalty_argument(variant, &h, log_f, log_g).map_err(|what| Error::Domain { simplex: i, what })?;
    Ok(arg.max(T::zero()))
}

/// Mean of `η` over the vertices of simplex `i`.
pub fn eta_mean<T: Scalar>(mesh: &Mesh<T>, i: usize, eta: &[T]) -> Vec<T> {
    let dim = mesh.dim();
    let mut m = vec![T::zero(); dim];
    for &v in mesh.simplex(i) {
        for k in 0..dim {
            m[k] += eta[v * dim + k];
        }
    }
    let c = T::from_count(dim + 1);
    m.iter_mut().for_each(|v| *v /= c);
    m
}

/// `Σ_i V_i · penalty_i`, summed in a fixed pairwise tree.
pub fn objective<T: Scalar>(mesh: &Mesh<T>, eta: &[T], f: &Density<T>, g: &Density<T>, variant: Variant) -> Result<T> {
    check_eta(mesh, eta)?;
    let nf = factorial::<T>(mesh.dim());
    let terms = (0..mesh.num_simplices())
        .into_par_iter()
        .map(|i| {
            let v = mesh.edge_matrix_unchecked(i).det().abs() / nf;
            Ok(v * penalty(mesh, i, eta, f, g, variant)?)
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(pairwise_sum(&terms))
}

/// Worst violation of `ψ_j >= ψ_i + ⟨η_i, x_j - x_i⟩` over ordered pairs.
pub fn hyperplane_max<T: Scalar>(mesh: &Mesh<T>, dv: &DecisionVector<T>) -> T {
    let n = dv.len();
    if n < 2 {
        return T::zero();
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = mesh.vertex(i);
            let ei = dv.eta_at(i);
            let mut worst = T::neg_infinity();
            for j in 0..n {
                if j != i {
                    let v = affine_piece(dv.psi[i], ei, xi, mesh.vertex(j)) - dv.psi[j];
                    worst = worst.max(v);
                }
            }
            worst
        })
        .reduce(|| T::neg_infinity(), T::max)
}

/// Residuals of all constraints. Degenerate simplices are skipped in
/// `min_eig_h`.
pub fn residuals<T: Scalar>(mesh: &Mesh<T>, dv: &DecisionVector<T>, target: &TargetDomain<T>) -> Result<ConstraintResiduals<T>> {
    dv.check_against(mesh)?;
    let target_max = (0..dv.len())
        .map(|j| target.violation(dv.eta_at(j)))
        .fold(T::zero(), T::max);
    let min_eig_h = (0..mesh.num_simplices())
        .into_par_iter()
        .filter_map(|i| discrete_jacobian(mesh, i, &dv.eta).ok().map(|h| h.min_eigenvalue()))
        .reduce(|| T::infinity(), T::min);
    Ok(ConstraintResiduals {
        hyperplane_max: hyperplane_max(mesh, dv),
        target_max,
        min_eig_h,
    })
}

/// Samples a potential and its gradient at the vertices.
pub fn restriction_data<T: Scalar>(mesh: &Mesh<T>, phi: impl Fn(&[T]) -> (T, Vec<T>)) -> DecisionVector<T> {
    let mut psi = Vec::with_capacity(mesh.num_vertices());
    let mut eta = Vec::with_capacity(mesh.num_vertices() * mesh.dim());
    for x in mesh.vertices() {
        let (v, g) = phi(x);
        psi.push(v);
        eta.extend_from_slice(&g[..mesh.dim()]);
    }
    DecisionVector {
        dim: mesh.dim(),
        psi,
        eta,
    }
}

/// Objective evaluated at `ψ_j = φ(x_j)`, `η_j = ∇φ(x_j)`.
pub fn restriction_cost<T: Scalar>(
    mesh: &Mesh<T>,
    phi: impl Fn(&[T]) -> (T, Vec<T>),
    f: &Density<T>,
    g: &Density<T>,
    variant: Variant,
) -> Result<T> {
    let dv = restriction_data(mesh, phi);
    objective(mesh, &dv.eta, f, g, variant)
}
