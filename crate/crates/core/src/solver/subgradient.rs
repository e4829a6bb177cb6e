//! Projected subgradient descent on the nonsmooth objective, used when the
//! Newton iteration stalls.

use rayon::prelude::*;

use super::local::{eval_simplex, is_pd, local_h, SimplexData};
use crate::dmaop::{affine_piece, objective, DecisionVector, Variant};
use crate::error::Result;
use crate::linalg::norm;
use crate::mesh::Mesh;
use crate::problem::ProblemInstance;
use crate::Scalar;

/// Raises `ψ` until every hyperplane constraint holds. Returns `false` when
/// no such lift exists (the `η` are not cyclically monotone).
pub fn lift_psi<T: Scalar>(mesh: &Mesh<T>, psi: &mut [T], eta: &[T]) -> bool {
    let n = mesh.dim();
    let nv = psi.len();
    for _ in 0..=nv {
        let mut changed = false;
        for j in 0..nv {
            let xj = mesh.vertex(j);
            for i in 0..nv {
                if i == j {
                    continue;
                }
                let v = affine_piece(psi[i], &eta[i * n..(i + 1) * n], mesh.vertex(i), xj);
                if v > psi[j] {
                    psi[j] = v;
                    changed = true;
                }
            }
        }
        if !changed {
            return true;
        }
    }
    false
}

fn subgradient<T: Scalar>(inst: &ProblemInstance<T>, data: &[SimplexData<T>], eta: &[T], variant: Variant) -> Result<Vec<T>> {
    let mesh = &inst.mesh;
    let n = mesh.dim();
    let locals = (0..mesh.num_simplices())
        .into_par_iter()
        .map(|i| {
            let ev = eval_simplex(&data[i], mesh.simplex(i), eta, n, &inst.g, variant, false)?;
            Ok(ev.filter(|ev| ev.p > T::zero()).map(|ev| ev.grad_p))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut g = vec![T::zero(); eta.len()];
    for (i, gl) in locals.iter().enumerate() {
        if let Some(gl) = gl {
            let s = mesh.simplex(i);
            for q in 0..n * (n + 1) {
                g[s[q / n] * n + q % n] += data[i].volume * gl[q];
            }
        }
    }
    Ok(g)
}

fn all_pd<T: Scalar>(mesh: &Mesh<T>, data: &[SimplexData<T>], eta: &[T]) -> bool {
    (0..mesh.num_simplices())
        .into_par_iter()
        .all(|i| is_pd(&local_h(&data[i], mesh.simplex(i), eta, mesh.dim())))
}

/// Runs at most `max_iter` steps from a feasible `start`; returns the best
/// iterate, its cost and the number of accepted steps.
pub(crate) fn projected_subgradient<T: Scalar>(
    inst: &ProblemInstance<T>,
    data: &[SimplexData<T>],
    variant: Variant,
    start: DecisionVector<T>,
    max_iter: usize,
) -> Result<(DecisionVector<T>, T, usize)> {
    let mesh = &inst.mesh;
    let n = mesh.dim();
    let (lo, hi) = inst.target.bbox();
    let extent = lo.iter().zip(&hi).map(|(a, b)| *b - *a).fold(T::zero(), T::max);
    let mut cur = start;
    let mut best_cost = objective(mesh, &cur.eta, &inst.f, &inst.g, variant)?;
    let mut best = cur.clone();
    let mut accepted = 0;
    for k in 0..max_iter {
        let g = subgradient(inst, data, &cur.eta, variant)?;
        let gn = norm(&g);
        if !(gn > T::zero()) {
            break;
        }
        let mut s = T::lit(0.05) * extent / T::from_count(k + 1).sqrt();
        let mut next = None;
        for _ in 0..30 {
            let mut eta = cur.eta.clone();
            for j in 0..cur.len() {
                let y: Vec<T> = (0..n).map(|c| eta[j * n + c] - s * g[j * n + c] / gn).collect();
                let p = inst.target.projection(&y);
                eta[j * n..(j + 1) * n].copy_from_slice(&p);
            }
            if all_pd(mesh, data, &eta) {
                let mut psi = cur.psi.clone();
                if lift_psi(mesh, &mut psi, &eta) {
                    next = Some(DecisionVector::new(n, psi, eta)?);
                    break;
                }
            }
            s *= T::lit(0.5);
        }
        let Some(nx) = next else { break };
        accepted += 1;
        let c = objective(mesh, &nx.eta, &inst.f, &inst.g, variant)?;
        if c < best_cost {
            best_cost = c;
            best = nx.clone();
        }
        cur = nx;
    }
    Ok((best, best_cost, accepted))
}
