//! Log-barrier formulation of the epigraph program.
//!
//! Variables are `z = (ψ_j, η_j)_j` interleaved per vertex (stride `n + 1`)
//! and one slack `t_i` per simplex. The barrier function at parameter `τ` is
//!
//! ```text
//! Σ_i [τ V_i t_i - log(t_i - p_i(η)) - log t_i - log det H_i]
//!   - Σ_{i≠j} log h_ij - Σ_j log s_j(η_j)
//! ```
//!
//! with hyperplane slacks `h_ij = ψ_j - ψ_i - ⟨η_i, x_j - x_i⟩` and target
//! slacks `s_j`. For fixed `η` the optimal `t_i` has a closed form, so the
//! slacks are eliminated and every function below is a function of `z`
//! alone.

use rayon::prelude::*;

use super::local::{eval_simplex, local_h, is_pd, SimplexData, MAX_LOCAL};
use crate::dmaop::{affine_piece, DecisionVector, Variant};
use crate::error::Result;
use crate::linalg::{pairwise_sum, DenseSym};
use crate::problem::{ProblemInstance, TargetDomain};
use crate::Scalar;

/// Sizes of the constraint families of the epigraph program.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProgramCounts {
    pub slacks: usize,
    pub epigraph: usize,
    pub hyperplane: usize,
    /// One membership constraint per vertex.
    pub target: usize,
    /// Individual barrier terms making up the target constraints.
    pub target_terms: usize,
    pub jacobian: usize,
}

impl ProgramCounts {
    /// Self-concordance parameter of the full barrier.
    pub fn barrier_parameter(&self, dim: usize) -> usize {
        self.hyperplane + self.target_terms + self.jacobian * dim + self.epigraph + self.slacks
    }
}

/// Smooth barrier program for one instance.
pub struct BarrierProgram<'a, T> {
    inst: &'a ProblemInstance<T>,
    variant: Variant,
    n: usize,
    nv: usize,
    data: Vec<SimplexData<T>>,
}

/// Result of a backtracking line search.
pub(crate) enum StepOutcome<T> {
    Accepted { alpha: T, value: T },
    Failed,
}

/// Optimal slack `t` and `t - p` for `min_t τV t - log(t - p) - log t`.
#[inline]
fn optimal_slack<T: Scalar>(tv: T, p: T) -> (T, T) {
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let q = tv * p;
    let root = (q * q + four).sqrt();
    if q > T::zero() {
        let e = (two + four / (root + q)) / (two * tv);
        (p + e, e)
    } else {
        let t = (two + four / (root - q)) / (two * tv);
        (t, t - p)
    }
}

impl<'a, T: Scalar> BarrierProgram<'a, T> {
    pub fn new(inst: &'a ProblemInstance<T>, variant: Variant) -> Result<Self> {
        Ok(Self {
            inst,
            variant,
            n: inst.mesh.dim(),
            nv: inst.mesh.num_vertices(),
            data: SimplexData::build(&inst.mesh, &inst.f)?,
        })
    }

    pub fn counts(&self) -> ProgramCounts {
        let m = self.inst.mesh.num_simplices();
        let per_vertex = match &self.inst.target {
            TargetDomain::Disc { .. } => 1,
            TargetDomain::Polygon { halfspaces, .. } => halfspaces.len(),
        };
        ProgramCounts {
            slacks: m,
            epigraph: m,
            hyperplane: self.nv * self.nv.saturating_sub(1),
            target: self.nv,
            target_terms: self.nv * per_vertex,
            jacobian: m,
        }
    }

    pub fn barrier_parameter(&self) -> T {
        T::from_count(self.counts().barrier_parameter(self.n))
    }

    /// Number of free variables after slack elimination.
    pub fn dim(&self) -> usize {
        self.nv * (self.n + 1)
    }

    pub fn pack(&self, dv: &DecisionVector<T>) -> Vec<T> {
        let b = self.n + 1;
        let mut z = vec![T::zero(); self.dim()];
        for j in 0..self.nv {
            z[j * b] = dv.psi[j];
            z[j * b + 1..(j + 1) * b].copy_from_slice(dv.eta_at(j));
        }
        z
    }

    pub fn unpack(&self, z: &[T]) -> DecisionVector<T> {
        let b = self.n + 1;
        let psi = (0..self.nv).map(|j| z[j * b]).collect();
        DecisionVector::new(self.n, psi, self.eta_of(z)).expect("consistent sizes")
    }

    fn eta_of(&self, z: &[T]) -> Vec<T> {
        let b = self.n + 1;
        let mut eta = Vec::with_capacity(self.nv * self.n);
        for j in 0..self.nv {
            eta.extend_from_slice(&z[j * b + 1..(j + 1) * b]);
        }
        eta
    }

    #[inline]
    fn hslack(&self, z: &[T], i: usize, j: usize) -> T {
        let b = self.n + 1;
        let mesh = &self.inst.mesh;
        z[j * b] - affine_piece(z[i * b], &z[i * b + 1..(i + 1) * b], mesh.vertex(i), mesh.vertex(j))
    }

    /// `Σ log s` over the target terms of one point, `None` outside.
    fn target_log(&self, y: &[T]) -> Option<T> {
        match &self.inst.target {
            TargetDomain::Disc { center, radius } => {
                let mut d2 = T::zero();
                for k in 0..y.len() {
                    d2 += (y[k] - center[k]) * (y[k] - center[k]);
                }
                let s = *radius * *radius - d2;
                (s > T::zero()).then(|| s.ln())
            }
            TargetDomain::Polygon { halfspaces, .. } => {
                let mut acc = T::zero();
                for (a, bm) in halfspaces {
                    let s = *bm - (a[0] * y[0] + a[1] * y[1]);
                    if !(s > T::zero()) {
                        return None;
                    }
                    acc += s.ln();
                }
                Some(acc)
            }
        }
    }

    /// Barrier function value; `None` outside the domain.
    pub fn value(&self, z: &[T], tau: T) -> Result<Option<T>> {
        let nv = self.nv;
        let b = self.n + 1;
        let rows: Option<Vec<T>> = (0..nv)
            .into_par_iter()
            .map(|i| {
                let mut acc = T::zero();
                for j in 0..nv {
                    if j != i {
                        let h = self.hslack(z, i, j);
                        if !(h > T::zero()) {
                            return None;
                        }
                        acc += h.ln();
                    }
                }
                let s = self.target_log(&z[i * b + 1..(i + 1) * b])?;
                Some(-(acc + s))
            })
            .collect();
        let Some(rows) = rows else { return Ok(None) };
        let eta = self.eta_of(z);
        let mesh = &self.inst.mesh;
        let terms: Result<Option<Vec<T>>> = (0..mesh.num_simplices())
            .into_par_iter()
            .map(|i| {
                let sd = &self.data[i];
                let ev = eval_simplex(sd, mesh.simplex(i), &eta, self.n, &self.inst.g, self.variant, false)?;
                Ok(ev.map(|ev| {
                    let tv = tau * sd.volume;
                    let (t, e) = optimal_slack(tv, ev.p);
                    tv * t - e.ln() - t.ln() - ev.logdet
                }))
            })
            .collect::<Result<Vec<Option<T>>>>()
            .map(|v| v.into_iter().collect());
        let Some(terms) = terms? else { return Ok(None) };
        Ok(Some(pairwise_sum(&rows) + pairwise_sum(&terms)))
    }

    /// Gradient of the barrier function.
    pub fn gradient(&self, z: &[T], tau: T) -> Result<Vec<T>> {
        Ok(self.assemble(z, tau, false)?.1)
    }

    /// Hessian (when requested) and gradient at a strictly feasible point.
    pub(crate) fn assemble(&self, z: &[T], tau: T, with_hessian: bool) -> Result<(Option<DenseSym<T>>, Vec<T>)> {
        let n = self.n;
        let b = n + 1;
        let nv = self.nv;
        let dim = self.dim();
        let mesh = &self.inst.mesh;

        // reciprocal hyperplane slacks, row i = anchor
        let mut u = vec![T::zero(); nv * nv];
        u.par_chunks_mut(nv.max(1)).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                if j != i {
                    *v = T::one() / self.hslack(z, i, j);
                }
            }
        });

        let mut grad = vec![T::zero(); dim];
        let mut hess = with_hessian.then(|| DenseSym::zeros(dim));
        let row_block = |k: usize, g: &mut [T], rows: Option<&mut [T]>| {
            let xk = mesh.vertex(k);
            let mut gblk = [T::zero(); 4];
            let mut hblk = [[T::zero(); 4]; 4];
            let mut rows = rows;
            let mut d = [T::zero(); 3];
            for j in 0..nv {
                if j == k {
                    continue;
                }
                let xj = mesh.vertex(j);
                // k as anchor
                let uk = u[k * nv + j];
                let w = uk * uk;
                for c in 0..n {
                    d[c] = xj[c] - xk[c];
                }
                gblk[0] += uk;
                for c in 0..n {
                    gblk[1 + c] += uk * d[c];
                }
                // k as the lifted vertex of pair (j, k)
                let uj = u[j * nv + k];
                let wj = uj * uj;
                gblk[0] -= uj;
                if let Some(r) = rows.as_deref_mut() {
                    hblk[0][0] += w + wj;
                    for c in 0..n {
                        hblk[0][1 + c] += w * d[c];
                        for c2 in 0..n {
                            hblk[1 + c][1 + c2] += w * d[c] * d[c2];
                        }
                    }
                    // cross entries with vertex j
                    r[j * b] -= w + wj;
                    for c in 0..n {
                        r[(1 + c) * dim + j * b] -= w * d[c];
                        // d_jk = x_k - x_j = -d
                        r[j * b + 1 + c] += wj * d[c];
                    }
                }
            }
            // target barrier on η_k
            let y = &z[k * b + 1..(k + 1) * b];
            match &self.inst.target {
                TargetDomain::Disc { center, radius } => {
                    let mut d2 = T::zero();
                    for c in 0..n {
                        d2 += (y[c] - center[c]) * (y[c] - center[c]);
                    }
                    let s = *radius * *radius - d2;
                    let two = T::lit(2.0);
                    for c in 0..n {
                        gblk[1 + c] += two * (y[c] - center[c]) / s;
                        for c2 in 0..n {
                            let mut v = T::lit(4.0) * (y[c] - center[c]) * (y[c2] - center[c2]) / (s * s);
                            if c == c2 {
                                v += two / s;
                            }
                            hblk[1 + c][1 + c2] += v;
                        }
                    }
                }
                TargetDomain::Polygon { halfspaces, .. } => {
                    for (a, bm) in halfspaces {
                        let s = *bm - (a[0] * y[0] + a[1] * y[1]);
                        for c in 0..2 {
                            gblk[1 + c] += a[c] / s;
                            for c2 in 0..2 {
                                hblk[1 + c][1 + c2] += a[c] * a[c2] / (s * s);
                            }
                        }
                    }
                }
            }
            g.copy_from_slice(&gblk[..b]);
            if let Some(r) = rows {
                for p in 0..b {
                    for q in 0..b {
                        let v = if q >= p { hblk[p][q] } else { hblk[q][p] };
                        r[p * dim + k * b + q] += v;
                    }
                }
            }
        };
        match hess.as_mut() {
            Some(h) => {
                let data = h.rows_mut_flat();
                data.par_chunks_mut(b * dim)
                    .zip(grad.par_chunks_mut(b))
                    .enumerate()
                    .for_each(|(k, (rows, g))| row_block(k, g, Some(rows)));
            }
            None => {
                grad.par_chunks_mut(b).enumerate().for_each(|(k, g)| row_block(k, g, None));
            }
        }

        // simplex terms, computed in parallel and scattered in order
        let eta = self.eta_of(z);
        let m = n * b;
        let locals = (0..mesh.num_simplices())
            .into_par_iter()
            .map(|i| {
                let sd = &self.data[i];
                let ev = eval_simplex(sd, mesh.simplex(i), &eta, n, &self.inst.g, self.variant, with_hessian)?
                    .ok_or_else(|| crate::Error::Solver(format!("simplex {i} left the barrier domain")))?;
                let tv = tau * sd.volume;
                let (t, e) = optimal_slack(tv, ev.p);
                let d1 = T::one() / e;
                let e2 = d1 * d1;
                let d2 = e2 - e2 * e2 / (e2 + T::one() / (t * t));
                let mut gl = [T::zero(); MAX_LOCAL];
                let mut hl = [[T::zero(); MAX_LOCAL]; MAX_LOCAL];
                for q in 0..m {
                    gl[q] = d1 * ev.grad_p[q] - ev.grad_l[q];
                    if with_hessian {
                        for r in 0..m {
                            hl[q][r] = d2 * ev.grad_p[q] * ev.grad_p[r] + d1 * ev.hess_p[q][r] - ev.hess_l[q][r];
                        }
                    }
                }
                Ok((gl, hl))
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, (gl, hl)) in locals.iter().enumerate() {
            let s = mesh.simplex(i);
            let idx = |q: usize| s[q / n] * b + 1 + q % n;
            for q in 0..m {
                grad[idx(q)] += gl[q];
                if let Some(h) = hess.as_mut() {
                    for r in 0..m {
                        h.add_to(idx(q), idx(r), hl[q][r]);
                    }
                }
            }
        }
        Ok((hess, grad))
    }

    /// Largest `α` keeping every linear constraint and the disc constraint
    /// strictly satisfied along `z + α dz` (may be infinite).
    pub(crate) fn max_step(&self, z: &[T], dz: &[T]) -> T {
        let nv = self.nv;
        let n = self.n;
        let b = n + 1;
        let mesh = &self.inst.mesh;
        let hp = (0..nv)
            .into_par_iter()
            .map(|i| {
                let mut best = T::infinity();
                let ei = &dz[i * b + 1..(i + 1) * b];
                for j in 0..nv {
                    if j == i {
                        continue;
                    }
                    let dh = dz[j * b] - affine_piece(dz[i * b], ei, mesh.vertex(i), mesh.vertex(j));
                    if dh < T::zero() {
                        best = best.min(-self.hslack(z, i, j) / dh);
                    }
                }
                let y = &z[i * b + 1..(i + 1) * b];
                let dy = &dz[i * b + 1..(i + 1) * b];
                match &self.inst.target {
                    TargetDomain::Disc { center, radius } => {
                        let (mut a, mut bb, mut c) = (T::zero(), T::zero(), -(*radius * *radius));
                        for k in 0..n {
                            let o = y[k] - center[k];
                            a += dy[k] * dy[k];
                            bb += T::lit(2.0) * o * dy[k];
                            c += o * o;
                        }
                        if a > T::zero() {
                            let disc = (bb * bb - T::lit(4.0) * a * c).max(T::zero());
                            best = best.min((-bb + disc.sqrt()) / (T::lit(2.0) * a));
                        }
                    }
                    TargetDomain::Polygon { halfspaces, .. } => {
                        for (a, bm) in halfspaces {
                            let rate = a[0] * dy[0] + a[1] * dy[1];
                            if rate > T::zero() {
                                best = best.min((*bm - (a[0] * y[0] + a[1] * y[1])) / rate);
                            }
                        }
                    }
                }
                best
            })
            .reduce(|| T::infinity(), T::min);
        hp
    }

    /// All Jacobians positive definite at `z`.
    pub(crate) fn jacobians_pd(&self, z: &[T]) -> bool {
        let eta = self.eta_of(z);
        let mesh = &self.inst.mesh;
        (0..mesh.num_simplices())
            .into_par_iter()
            .all(|i| is_pd(&local_h(&self.data[i], mesh.simplex(i), &eta, self.n)))
    }

    /// Backtracking Armijo search along `dz` from `z` with value `f0` and
    /// directional derivative `slope < 0`.
    pub(crate) fn line_search(&self, z: &[T], dz: &[T], tau: T, f0: T, slope: T) -> Result<StepOutcome<T>> {
        let amax = self.max_step(z, dz);
        let mut alpha = if amax.is_finite() { (T::lit(0.99) * amax).min(T::one()) } else { T::one() };
        let slack = T::lit(64.0) * T::epsilon() * (T::one() + f0.abs());
        let mut trial = vec![T::zero(); z.len()];
        for _ in 0..60 {
            for k in 0..z.len() {
                trial[k] = z[k] + alpha * dz[k];
            }
            if self.jacobians_pd(&trial) {
                if let Some(v) = self.value(&trial, tau)? {
                    if v <= f0 + T::lit(1e-4) * alpha * slope + slack {
                        return Ok(StepOutcome::Accepted { alpha, value: v });
                    }
                }
            }
            alpha *= T::lit(0.5);
            if alpha < T::lit(1e-14) {
                break;
            }
        }
        Ok(StepOutcome::Failed)
    }

    /// Damped Newton direction; `ψ` of vertex 0 is held fixed because the
    /// barrier is invariant under a common shift of all `ψ`.
    pub(crate) fn newton_direction(&self, z: &[T], tau: T) -> Result<(Vec<T>, Vec<T>)> {
        let (hess, mut grad) = self.assemble(z, tau, true)?;
        let mut h = hess.expect("requested");
        let dim = self.dim();
        for k in 0..dim {
            let v = if k == 0 { T::one() } else { T::zero() };
            h.row_mut(0)[k] = v;
            h.row_mut(k)[0] = v;
        }
        grad[0] = T::zero();
        let scale: Vec<T> = h
            .diagonal()
            .iter()
            .map(|&d| if d > T::zero() { T::one() / d.sqrt() } else { T::one() })
            .collect();
        h.scale_sym(&scale);
        let rhs: Vec<T> = grad.iter().zip(&scale).map(|(g, s)| -*g * *s).collect();
        let mut shift = T::zero();
        for _ in 0..12 {
            let mut m = h.clone();
            if shift > T::zero() {
                for k in 0..dim {
                    m.add_to(k, k, shift);
                }
            }
            if let Ok(ch) = m.cholesky_in_place() {
                let y = ch.solve(&rhs);
                let dz = y.iter().zip(&scale).map(|(y, s)| *y * *s).collect();
                return Ok((dz, grad));
            }
            shift = if shift == T::zero() { T::lit(1e-12) } else { shift * T::lit(100.0) };
        }
        Err(crate::Error::Solver("Newton system could not be factorized".into()))
    }
}
