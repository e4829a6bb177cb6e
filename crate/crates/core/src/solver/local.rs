//! Per-simplex value, gradient and Hessian of `log det H_i` and of the signed
//! penalty argument `p_i` with respect to the `n(n+1)` local `η` entries.
//!
//! Local index `q = v * n + c` addresses component `c` of `η` at the `v`-th
//! vertex of the simplex.

use crate::dmaop::{jacobian_with, Variant};
use crate::error::{Error, Result};
use crate::linalg::{SmallMat, MAX_DIM};
use crate::mesh::Mesh;
use crate::problem::Density;
use crate::scalar::factorial;
use crate::Scalar;

pub const MAX_LOCAL: usize = MAX_DIM * (MAX_DIM + 1);

pub type LocalVec<T> = [T; MAX_LOCAL];
pub type LocalMat<T> = [[T; MAX_LOCAL]; MAX_LOCAL];

/// Mesh-dependent constants of one simplex.
#[derive(Clone, Debug)]
pub struct SimplexData<T> {
    pub ainv: SmallMat<T>,
    /// `dcol[v]` is `∂(A⁻¹B)/∂η_v` applied to a unit vector: column `v` of
    /// `A⁻¹ [-1 | I]`.
    pub dcol: [[T; MAX_DIM]; MAX_DIM + 1],
    pub volume: T,
    pub log_f: T,
}

impl<T: Scalar> SimplexData<T> {
    pub fn build(mesh: &Mesh<T>, f: &Density<T>) -> Result<Vec<Self>> {
        let n = mesh.dim();
        let nf = factorial::<T>(n);
        (0..mesh.num_simplices())
            .map(|i| {
                let a = mesh.edge_matrix(i)?;
                let ainv = a.inverse().ok_or(Error::DegenerateSimplex {
                    simplex: i,
                    det: a.det().as_f64(),
                })?;
                let mut dcol = [[T::zero(); MAX_DIM]; MAX_DIM + 1];
                for r in 0..n {
                    let mut s = T::zero();
                    for k in 0..n {
                        dcol[k + 1][r] = ainv.get(r, k);
                        s += ainv.get(r, k);
                    }
                    dcol[0][r] = -s;
                }
                Ok(Self {
                    ainv,
                    dcol,
                    volume: a.det().abs() / nf,
                    log_f: f.log_eval(&mesh.barycenter_unchecked(i))?,
                })
            })
            .collect()
    }
}

/// `H ≻ 0` by Sylvester's criterion.
pub fn is_pd<T: Scalar>(h: &SmallMat<T>) -> bool {
    let z = T::zero();
    match h.dim() {
        1 => h.get(0, 0) > z,
        2 => h.get(0, 0) > z && h.det() > z,
        _ => {
            let m2 = h.get(0, 0) * h.get(1, 1) - h.get(0, 1) * h.get(1, 0);
            h.get(0, 0) > z && m2 > z && h.det() > z
        }
    }
}

/// Derivatives of one simplex term.
#[derive(Clone, Debug)]
pub struct SimplexEval<T> {
    pub logdet: T,
    pub grad_l: LocalVec<T>,
    pub hess_l: LocalMat<T>,
    pub p: T,
    pub grad_p: LocalVec<T>,
    pub hess_p: LocalMat<T>,
}

/// `H_i` for the local `η`.
pub fn local_h<T: Scalar>(sd: &SimplexData<T>, s: &[usize], eta: &[T], n: usize) -> SmallMat<T> {
    jacobian_with(&sd.ainv, s, eta, n).sym()
}

/// Evaluates the simplex term; `None` when `H_i` is not positive definite.
pub fn eval_simplex<T: Scalar>(
    sd: &SimplexData<T>,
    s: &[usize],
    eta: &[T],
    n: usize,
    g: &Density<T>,
    variant: Variant,
    with_hessian: bool,
) -> Result<Option<SimplexEval<T>>> {
    let h = local_h(sd, s, eta, n);
    if !is_pd(&h) {
        return Ok(None);
    }
    let hinv = match h.inverse() {
        Some(m) => m,
        None => return Ok(None),
    };
    let m = n * (n + 1);
    let det = h.det();
    let logdet = det.ln();

    let mut grad_l = [T::zero(); MAX_LOCAL];
    // K_q = H⁻¹ sym(d_v e_cᵀ)
    let mut kq = [SmallMat::zeros(n); MAX_LOCAL];
    for v in 0..=n {
        let hd = hinv.mul_vec(&sd.dcol[v][..n]);
        for c in 0..n {
            let q = v * n + c;
            grad_l[q] = hd[c];
            if with_hessian {
                let mut e = SmallMat::zeros(n);
                for a in 0..n {
                    e.set(a, c, e.get(a, c) + T::lit(0.5) * sd.dcol[v][a]);
                    e.set(c, a, e.get(c, a) + T::lit(0.5) * sd.dcol[v][a]);
                }
                kq[q] = hinv.mul(&e);
            }
        }
    }
    let mut hess_l = [[T::zero(); MAX_LOCAL]; MAX_LOCAL];
    if with_hessian {
        for q in 0..m {
            for r in q..m {
                let mut tr = T::zero();
                for a in 0..n {
                    for b in 0..n {
                        tr += kq[q].get(a, b) * kq[r].get(b, a);
                    }
                }
                hess_l[q][r] = -tr;
                hess_l[r][q] = -tr;
            }
        }
    }

    // log g at the η mean and its derivatives with the 1/(n+1) chain factor
    let mut mean = [T::zero(); MAX_DIM];
    for &v in s {
        for c in 0..n {
            mean[c] += eta[v * n + c];
        }
    }
    let k1 = T::one() / T::from_count(n + 1);
    for c in mean.iter_mut().take(n) {
        *c *= k1;
    }
    let (lg, gg, hg) = g.log_derivs(&mean[..n])?;
    let mut grad_g = [T::zero(); MAX_LOCAL];
    let mut hess_g = [[T::zero(); MAX_LOCAL]; MAX_LOCAL];
    let uniform = g.is_uniform();
    if !uniform {
        for q in 0..m {
            grad_g[q] = gg[q % n] * k1;
            if with_hessian {
                for r in 0..m {
                    hess_g[q][r] = hg.get(q % n, r % n) * k1 * k1;
                }
            }
        }
    }

    let mut grad_p = [T::zero(); MAX_LOCAL];
    let mut hess_p = [[T::zero(); MAX_LOCAL]; MAX_LOCAL];
    let p = match variant {
        Variant::Ldmaop => {
            for q in 0..m {
                grad_p[q] = -grad_l[q] - grad_g[q];
                if with_hessian {
                    for r in 0..m {
                        hess_p[q][r] = -hess_l[q][r] - hess_g[q][r];
                    }
                }
            }
            -logdet - lg + sd.log_f
        }
        Variant::Dmaop => {
            let nn = T::from_count(n);
            let d = if n == 2 { det.sqrt() } else { (logdet / nn).exp() };
            let rr = ((sd.log_f - lg) / nn).exp();
            for q in 0..m {
                grad_p[q] = -(d / nn) * grad_l[q] - (rr / nn) * grad_g[q];
                if with_hessian {
                    for r in 0..m {
                        let hd = (d / nn) * hess_l[q][r] + (d / (nn * nn)) * grad_l[q] * grad_l[r];
                        let hr = rr * (grad_g[q] * grad_g[r] / (nn * nn) - hess_g[q][r] / nn);
                        hess_p[q][r] = -hd + hr;
                    }
                }
            }
            -d + rr
        }
    };
    Ok(Some(SimplexEval {
        logdet,
        grad_l,
        hess_l,
        p,
        grad_p,
        hess_p,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polygon;
    use crate::mesh::triangulate_polygon;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_check(variant: Variant, g: &Density<f64>) {
        let p = Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [0.8, 0.9], [0.1, 0.7]]);
        let mesh = triangulate_polygon(&p, 0.3).unwrap();
        let f = Density::gaussian(vec![0.5, 0.5], vec![0.7, 0.4], 1.3, None).unwrap();
        let data = SimplexData::build(&mesh, &f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nv = mesh.num_vertices();
        let mut tested = 0;
        while tested < 20 {
            let m = [rng.gen_range(0.5..2.0), rng.gen_range(-0.3..0.3), rng.gen_range(0.5..2.0)];
            let mut eta = Vec::with_capacity(2 * nv);
            for x in mesh.vertices() {
                eta.push(m[0] * x[0] + m[1] * x[1] + rng.gen_range(-0.02..0.02));
                eta.push(m[1] * x[0] + m[2] * x[1] + rng.gen_range(-0.02..0.02));
            }
            let i = rng.gen_range(0..mesh.num_simplices());
            let s = mesh.simplex(i);
            let Some(ev) = eval_simplex(&data[i], s, &eta, 2, g, variant, true).unwrap() else {
                continue;
            };
            tested += 1;
            let step = 1e-6;
            for q in 0..6 {
                let idx = s[q / 2] * 2 + q % 2;
                let mut ep = eta.clone();
                let mut em = eta.clone();
                ep[idx] += step;
                em[idx] -= step;
                let a = eval_simplex(&data[i], s, &ep, 2, g, variant, false).unwrap().unwrap();
                let b = eval_simplex(&data[i], s, &em, 2, g, variant, false).unwrap().unwrap();
                let fd_l = (a.logdet - b.logdet) / (2.0 * step);
                let fd_p = (a.p - b.p) / (2.0 * step);
                assert!((fd_l - ev.grad_l[q]).abs() <= 1e-6 * ev.grad_l[q].abs().max(1.0), "{fd_l} {}", ev.grad_l[q]);
                assert!((fd_p - ev.grad_p[q]).abs() <= 1e-6 * ev.grad_p[q].abs().max(1.0), "{fd_p} {}", ev.grad_p[q]);
                for r in 0..6 {
                    let fd_h = (a.grad_p[r] - b.grad_p[r]) / (2.0 * step);
                    assert!((fd_h - ev.hess_p[q][r]).abs() <= 1e-5 * ev.hess_p[q][r].abs().max(1.0));
                    let fd_hl = (a.grad_l[r] - b.grad_l[r]) / (2.0 * step);
                    assert!((fd_hl - ev.hess_l[q][r]).abs() <= 1e-5 * ev.hess_l[q][r].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let gauss = Density::gaussian(vec![0.6, 0.4], vec![0.8, 1.1], 2.0, Some(1e-6)).unwrap();
        for v in [Variant::Ldmaop, Variant::Dmaop] {
            fd_check(v, &Density::uniform(0.8));
            fd_check(v, &gauss);
        }
    }

    #[test]
    fn pd_test() {
        assert!(is_pd(&SmallMat::<f64>::identity(2)));
        assert!(!is_pd(&SmallMat::<f64>::diag(&[-1.0, -1.0])));
        assert!(is_pd(&SmallMat::<f64>::identity(3)));
        assert!(!is_pd(&SmallMat::<f64>::diag(&[1.0, -1.0, -1.0])));
    }
}
