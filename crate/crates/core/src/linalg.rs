//! Small fixed-size matrices (dimension 1 to 3), deterministic reductions and
//! a dense Cholesky factorization for the Newton systems.

use rayon::prelude::*;

use crate::Scalar;

/// Largest ambient dimension supported by [`SmallMat`].
pub const MAX_DIM: usize = 3;

/// A square matrix of runtime size `n <= 3`, stored inline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmallMat<T> {
    n: usize,
    a: [[T; MAX_DIM]; MAX_DIM],
}

impl<T: Scalar> SmallMat<T> {
    pub fn zeros(n: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&n), "matrix dimension {n} unsupported");
        Self {
            n,
            a: [[T::zero(); MAX_DIM]; MAX_DIM],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.a[i][i] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[&[T]]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), n, "non-square row");
            m.a[i][..n].copy_from_slice(r);
        }
        m
    }

    pub fn diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.a[i][i] = v;
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        debug_assert!(i < self.n && j < self.n);
        self.a[i][j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        debug_assert!(i < self.n && j < self.n);
        self.a[i][j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.a[i][..self.n]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.a[j][i] = self.a[i][j];
            }
        }
        t
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.n, rhs.n);
        let mut c = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let mut s = T::zero();
                for k in 0..self.n {
                    s += self.a[i][k] * rhs.a[k][j];
                }
                c.a[i][j] = s;
            }
        }
        c
    }

    pub fn mul_vec(&self, v: &[T]) -> [T; MAX_DIM] {
        let mut out = [T::zero(); MAX_DIM];
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            let mut s = T::zero();
            for k in 0..self.n {
                s += self.a[i][k] * v[k];
            }
            *o = s;
        }
        out
    }

    pub fn add(&self, rhs: &Self) -> Self {
        let mut c = *self;
        for i in 0..self.n {
            for j in 0..self.n {
                c.a[i][j] += rhs.a[i][j];
            }
        }
        c
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        let mut c = *self;
        for i in 0..self.n {
            for j in 0..self.n {
                c.a[i][j] -= rhs.a[i][j];
            }
        }
        c
    }

    pub fn scale(&self, s: T) -> Self {
        let mut c = *self;
        for i in 0..self.n {
            for j in 0..self.n {
                c.a[i][j] *= s;
            }
        }
        c
    }

    /// `½(M + Mᵀ)`; the result is exactly symmetric.
    pub fn sym(&self) -> Self {
        let half = T::lit(0.5);
        let mut s = Self::zeros(self.n);
        for i in 0..self.n {
            s.a[i][i] = self.a[i][i];
            for j in (i + 1)..self.n {
                let v = half * (self.a[i][j] + self.a[j][i]);
                s.a[i][j] = v;
                s.a[j][i] = v;
            }
        }
        s
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self.a[i][i]).fold(T::zero(), |a, b| a + b)
    }

    /// Closed-form determinant (cofactor expansion for `n = 3`).
    pub fn det(&self) -> T {
        let a = &self.a;
        match self.n {
            1 => a[0][0],
            2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
            _ => {
                a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                    - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                    + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
            }
        }
    }

    /// Inverse via the adjugate; `None` when the determinant is zero or not finite.
    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == T::zero() || !d.is_finite() {
            return None;
        }
        let a = &self.a;
        let mut inv = Self::zeros(self.n);
        match self.n {
            1 => inv.a[0][0] = T::one() / d,
            2 => {
                inv.a[0][0] = a[1][1] / d;
                inv.a[0][1] = -a[0][1] / d;
                inv.a[1][0] = -a[1][0] / d;
                inv.a[1][1] = a[0][0] / d;
            }
            _ => {
                for i in 0..3 {
                    for j in 0..3 {
                        let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                        let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                        inv.a[i][j] = (a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]) / d;
                    }
                }
            }
        }
        Some(inv)
    }

    /// Eigenvalues of a symmetric matrix in ascending order (only the first
    /// `n` entries are meaningful).
    pub fn sym_eigenvalues(&self) -> [T; MAX_DIM] {
        let a = &self.a;
        let mut out = [T::zero(); MAX_DIM];
        match self.n {
            1 => out[0] = a[0][0],
            2 => {
                let half = T::lit(0.5);
                let m = half * (a[0][0] + a[1][1]);
                let d = half * (a[0][0] - a[1][1]);
                let r = d.hypot(a[0][1]);
                out[0] = m - r;
                out[1] = m + r;
            }
            _ => {
                out[..3].copy_from_slice(&sym3_eigenvalues(self));
            }
        }
        out
    }

    pub fn min_eigenvalue(&self) -> T {
        self.sym_eigenvalues()[0]
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        let mut m = T::zero();
        for i in 0..self.n {
            for j in 0..self.n {
                m = m.max((self.a[i][j] - other.a[i][j]).abs());
            }
        }
        m
    }
}

/// Symmetric 3x3 eigenvalues by cyclic Jacobi rotations, sorted ascending.
fn sym3_eigenvalues<T: Scalar>(m: &SmallMat<T>) -> [T; 3] {
    let mut a = [[T::zero(); 3]; 3];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m.get(i, j);
        }
    }
    for _sweep in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        let scale = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
        if off == T::zero() || off <= T::epsilon() * T::lit(1e-3) * scale {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q] == T::zero() {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (T::lit(2.0) * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
            let c = T::one() / (t * t + T::one()).sqrt();
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
        }
    }
    let mut ev = [a[0][0], a[1][1], a[2][2]];
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

/// Pairwise (tree) summation: the result depends only on the input order.
pub fn pairwise_sum<T: Scalar>(v: &[T]) -> T {
    const LEAF: usize = 32;
    if v.len() <= LEAF {
        return v.iter().fold(T::zero(), |a, &b| a + b);
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (T::zero(), T::zero(), T::zero(), T::zero());
    for c in 0..chunks {
        let k = 4 * c;
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for k in (4 * chunks)..n {
        s += a[k] * b[k];
    }
    s
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Dense symmetric matrix stored as a full row-major square.
#[derive(Clone, Debug)]
pub struct DenseSym<T> {
    n: usize,
    data: Vec<T>,
}

/// Returned when a pivot is not strictly positive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NotPositiveDefinite {
    pub pivot: usize,
}

const BLOCK: usize = 64;

impl<T: Scalar> DenseSym<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] += v;
    }

    /// Adds `v` to both `(i, j)` and `(j, i)` (once when `i == j`).
    #[inline]
    pub fn add_sym(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] += v;
        if i != j {
            self.data[j * self.n + i] += v;
        }
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let n = self.n;
        &mut self.data[i * n..(i + 1) * n]
    }

    /// Row-major storage, for row-parallel assembly.
    pub fn rows_mut_flat(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn rows_mut(&mut self) -> std::slice::ChunksMut<'_, T> {
        let n = self.n.max(1);
        self.data.chunks_mut(n)
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| dot(&self.data[i * self.n..(i + 1) * self.n], x))
            .collect()
    }

    /// Scales to `D M D` with `D = diag(d)`.
    pub fn scale_sym(&mut self, d: &[T]) {
        let n = self.n;
        self.data
            .par_chunks_mut(n.max(1))
            .enumerate()
            .for_each(|(i, row)| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = *v * d[i] * d[j];
                }
            });
    }

    /// In-place Cholesky factorization `M = L Lᵀ`; the lower triangle is
    /// overwritten with `L`, the strict upper triangle is left untouched.
    ///
    /// Rows are processed in blocks; each entry of `L` is produced by the same
    /// sequence of floating point operations regardless of thread count.
    pub fn cholesky_in_place(mut self) -> Result<Cholesky<T>, NotPositiveDefinite> {
        let n = self.n;
        let mut ib = 0;
        while ib < n {
            let ie = (ib + BLOCK).min(n);
            let (done, rest) = self.data.split_at_mut(ib * n);
            let block = &mut rest[..(ie - ib) * n];
            // Columns left of the block, against already factored rows.
            let mut jb = 0;
            while jb < ib {
                let je = (jb + BLOCK).min(ib);
                let done_ref: &[T] = done;
                block.par_chunks_mut(n).for_each(|row_i| {
                    for j in jb..je {
                        let row_j = &done_ref[j * n..j * n + j];
                        let s = row_i[j] - dot(&row_i[..j], row_j);
                        row_i[j] = s / done_ref[j * n + j];
                    }
                });
                jb = je;
            }
            // Diagonal block.
            for li in 0..(ie - ib) {
                let i = ib + li;
                let (prev, cur) = block.split_at_mut(li * n);
                let row_i = &mut cur[..n];
                for j in ib..i {
                    let lj = j - ib;
                    let row_j = &prev[lj * n..lj * n + j];
                    let s = row_i[j] - dot(&row_i[..j], row_j);
                    row_i[j] = s / prev[lj * n + j];
                }
                let s = row_i[i] - dot(&row_i[..i], &row_i[..i]);
                if !(s > T::zero()) || !s.is_finite() {
                    return Err(NotPositiveDefinite { pivot: i });
                }
                row_i[i] = s.sqrt();
            }
            ib = ie;
        }
        Ok(Cholesky { l: self })
    }
}

/// Factor produced by [`DenseSym::cholesky_in_place`].
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: DenseSym<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.l.n;
        let d = &self.l.data;
        let mut y = b.to_vec();
        for i in 0..n {
            let s = y[i] - dot(&d[i * n..i * n + i], &y[..i]);
            y[i] = s / d[i * n + i];
        }
        // Back substitution with Lᵀ, column-oriented on the row-major L.
        for i in (0..n).rev() {
            y[i] /= d[i * n + i];
            let yi = y[i];
            let row = &d[i * n..i * n + i];
            for (k, &lik) in row.iter().enumerate() {
                y[k] -= lik * yi;
            }
        }
        y
    }
}
