//! Minimal sparse linear algebra: CSR storage, products, and the iterative
//! solvers backing the field solve and the fitting stage.
//!
//! Kept deliberately small: triplet assembly, matvec / transposed matvec,
//! transpose, Gustavson product, scaled addition, plus Jacobi-preconditioned
//! conjugate gradient (SPD systems) and BiCGSTAB (nonsymmetric systems).

use crate::error::{Error, Result};

/// Compressed sparse row matrix over f64.
///
/// Column indices are sorted and unique within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a CSR matrix from (row, col, value) triplets.
    /// Duplicate entries are summed; explicit zeros are kept.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::Dimension(format!(
                    "triplet ({r}, {c}) outside {nrows}x{ncols} matrix"
                )));
            }
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_unstable_by_key(|&i| (triplets[i].0, triplets[i].1));

        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        let mut prev: Option<(usize, usize)> = None;
        for &i in &order {
            let (r, c, v) = triplets[i];
            if prev == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                prev = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Ok(CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        })
    }

    /// Builds a CSR matrix by stacking explicit rows of (col, value) pairs.
    /// Pairs within a row need not be sorted; duplicates are summed.
    pub fn from_rows(ncols: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        let mut triplets = Vec::with_capacity(rows.iter().map(Vec::len).sum());
        for (r, row) in rows.iter().enumerate() {
            for &(c, v) in row {
                triplets.push((r, c, v));
            }
        }
        Self::from_triplets(rows.len(), ncols, &triplets)
    }

    /// Identity matrix of the given size.
    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[span.clone()], &self.data[span])
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            y[i] = acc;
        }
    }

    /// y = Aᵀ x without forming the transpose.
    pub fn matvec_transpose(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        y.fill(0.0);
        for i in 0..self.nrows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for k in self.indptr[i]..self.indptr[i + 1] {
                y[self.indices[k]] += self.data[k] * xi;
            }
        }
    }

    /// Aᵀ as a new CSR matrix (counting sort over columns, O(nnz)).
    pub fn transpose(&self) -> CsrMatrix {
        let mut indptr = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            indptr[c + 1] += 1;
        }
        for c in 0..self.ncols {
            indptr[c + 1] += indptr[c];
        }
        let mut indices = vec![0usize; self.nnz()];
        let mut data = vec![0.0; self.nnz()];
        let mut next = indptr.clone();
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[k];
                let dst = next[c];
                indices[dst] = r;
                data[dst] = self.data[k];
                next[c] += 1;
            }
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr,
            indices,
            data,
        }
    }

    /// C = A B (Gustavson row-merge with a dense accumulator).
    pub fn matmul(&self, rhs: &CsrMatrix) -> Result<CsrMatrix> {
        if self.ncols != rhs.nrows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.nrows, self.ncols, rhs.nrows, rhs.ncols
            )));
        }
        let n = rhs.ncols;
        let mut acc = vec![0.0f64; n];
        let mut marker = vec![usize::MAX; n];
        let mut cols_in_row: Vec<usize> = Vec::new();

        let mut indptr = Vec::with_capacity(self.nrows + 1);
        indptr.push(0usize);
        let mut indices = Vec::new();
        let mut data = Vec::new();

        for i in 0..self.nrows {
            cols_in_row.clear();
            for k in self.indptr[i]..self.indptr[i + 1] {
                let a_ik = self.data[k];
                let krow = self.indices[k];
                for l in rhs.indptr[krow]..rhs.indptr[krow + 1] {
                    let j = rhs.indices[l];
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = 0.0;
                        cols_in_row.push(j);
                    }
                    acc[j] += a_ik * rhs.data[l];
                }
            }
            cols_in_row.sort_unstable();
            for &j in &cols_in_row {
                indices.push(j);
                data.push(acc[j]);
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            nrows: self.nrows,
            ncols: n,
            indptr,
            indices,
            data,
        })
    }

    /// Gram matrix AᵀA.
    pub fn gram(&self) -> Result<CsrMatrix> {
        self.transpose().matmul(self)
    }

    /// C = self + alpha * other. Shapes must match.
    pub fn add_scaled(&self, alpha: f64, other: &CsrMatrix) -> Result<CsrMatrix> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::Dimension(format!(
                "cannot add {}x{} and {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        indptr.push(0usize);
        let mut indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut data = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.nrows {
            let (mut ka, mut kb) = (self.indptr[i], other.indptr[i]);
            let (ea, eb) = (self.indptr[i + 1], other.indptr[i + 1]);
            while ka < ea || kb < eb {
                let ca = if ka < ea { self.indices[ka] } else { usize::MAX };
                let cb = if kb < eb { other.indices[kb] } else { usize::MAX };
                if ca < cb {
                    indices.push(ca);
                    data.push(self.data[ka]);
                    ka += 1;
                } else if cb < ca {
                    indices.push(cb);
                    data.push(alpha * other.data[kb]);
                    kb += 1;
                } else {
                    indices.push(ca);
                    data.push(self.data[ka] + alpha * other.data[kb]);
                    ka += 1;
                    kb += 1;
                }
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            data,
        })
    }

    /// Main diagonal (zeros where absent).
    pub fn diagonal(&self) -> Vec<f64> {
        let n = self.nrows.min(self.ncols);
        let mut d = vec![0.0; n];
        for (i, di) in d.iter_mut().enumerate() {
            for k in self.indptr[i]..self.indptr[i + 1] {
                if self.indices[k] == i {
                    *di = self.data[k];
                    break;
                }
            }
        }
        d
    }

    /// Max |A(i,j) - A(j,i)| over stored entries.
    pub fn symmetry_defect(&self) -> f64 {
        let t = self.transpose();
        let mut defect = 0.0f64;
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = t.row(i);
            let (mut ka, mut kb) = (0usize, 0usize);
            while ka < ca.len() || kb < cb.len() {
                let a = if ka < ca.len() { ca[ka] } else { usize::MAX };
                let b = if kb < cb.len() { cb[kb] } else { usize::MAX };
                if a < b {
                    defect = defect.max(va[ka].abs());
                    ka += 1;
                } else if b < a {
                    defect = defect.max(vb[kb].abs());
                    kb += 1;
                } else {
                    defect = defect.max((va[ka] - vb[kb]).abs());
                    ka += 1;
                    kb += 1;
                }
            }
        }
        defect
    }

    /// ‖A x − b‖∞
    pub fn residual_inf(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.nrows];
        self.matvec(x, &mut ax);
        ax.iter()
            .zip(b)
            .map(|(a, bi)| (a - bi).abs())
            .fold(0.0, f64::max)
    }

    /// Dense copy, row-major. Only sensible for small matrices (tests, oracles).
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.ncols]; self.nrows];
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                m[i][self.indices[k]] = self.data[k];
            }
        }
        m
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final relative 2-norm residual ‖Ax−b‖/‖b‖.
    pub relative_residual: f64,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradient for symmetric positive definite
/// systems. Converges when ‖r‖₂ ≤ tol·‖b‖₂.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::Dimension("cg: system shape mismatch".into()));
    }
    let norm_b = norm2(b);
    if norm_b == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for it in 0..max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Solver(format!(
                "cg: matrix not positive definite (pᵀAp = {pap:.3e} at iteration {it})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = norm2(&r);
        if res <= tol * norm_b {
            return Ok((
                x,
                SolveStats {
                    iterations: it + 1,
                    relative_residual: res / norm_b,
                },
            ));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = norm2(&r) / norm_b;
    Err(Error::Solver(format!(
        "cg: no convergence after {max_iter} iterations (relative residual {res:.3e})"
    )))
}

/// Jacobi-preconditioned BiCGSTAB for general square systems.
/// Converges when ‖r‖₂ ≤ tol·‖b‖₂.
///
/// The shadow vector is pseudorandom (fixed seed) rather than the initial
/// residual: right-hand sides supported only on Dirichlet identity rows make
/// the residual exactly orthogonal to b after one sweep, which is a
/// guaranteed breakdown with the textbook choice.
pub fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::Dimension("bicgstab: system shape mismatch".into()));
    }
    let norm_b = norm2(b);
    if norm_b == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut state = 0x9e3779b97f4a7c15u64;
    let r0: Vec<f64> = (0..n)
        .map(|_| {
            // splitmix64, mapped to [-1, 1)
            state = state.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect();
    let mut rho = 1.0f64;
    let mut alpha = 1.0f64;
    let mut omega = 1.0f64;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];

    for it in 0..max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < f64::MIN_POSITIVE * 1e4 {
            let res = norm2(&r) / norm_b;
            return Err(Error::Solver(format!(
                "bicgstab: breakdown (rho ~ 0) at iteration {it}, relative residual {res:.3e}"
            )));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        for i in 0..n {
            phat[i] = p[i] * inv_diag[i];
        }
        a.matvec(&phat, &mut v);
        let r0v = dot(&r0, &v);
        if r0v == 0.0 {
            return Err(Error::Solver(format!(
                "bicgstab: breakdown (r0ᵀv = 0) at iteration {it}"
            )));
        }
        alpha = rho / r0v;
        // s = r - alpha v  (reuse r)
        for i in 0..n {
            r[i] -= alpha * v[i];
        }
        let norm_s = norm2(&r);
        if norm_s <= tol * norm_b {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            return Ok((
                x,
                SolveStats {
                    iterations: it + 1,
                    relative_residual: norm_s / norm_b,
                },
            ));
        }
        for i in 0..n {
            shat[i] = r[i] * inv_diag[i];
        }
        a.matvec(&shat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(Error::Solver(format!(
                "bicgstab: breakdown (t = 0) at iteration {it}"
            )));
        }
        omega = dot(&t, &r) / tt;
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] -= omega * t[i];
        }
        let res = norm2(&r);
        if res <= tol * norm_b {
            return Ok((
                x,
                SolveStats {
                    iterations: it + 1,
                    relative_residual: res / norm_b,
                },
            ));
        }
        if omega.abs() < f64::MIN_POSITIVE * 1e4 {
            return Err(Error::Solver(format!(
                "bicgstab: breakdown (omega ~ 0) at iteration {it}"
            )));
        }
    }
    let res = norm2(&r) / norm_b;
    Err(Error::Solver(format!(
        "bicgstab: no convergence after {max_iter} iterations (relative residual {res:.3e})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dense_matvec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        m.iter().map(|row| dot(row, x)).collect()
    }

    #[test]
    fn triplets_merge_duplicates() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 1, -1.0)]).unwrap();
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.to_dense(), vec![vec![3.0, 0.0], vec![0.0, -1.0]]);
    }

    #[test]
    fn triplet_out_of_bounds_is_dimension_error() {
        let err = CsrMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).unwrap_err();
        assert_eq!(err.category(), "dimension");
    }

    #[test]
    fn matvec_matches_dense() {
        let a = CsrMatrix::from_triplets(
            3,
            4,
            &[
                (0, 0, 2.0),
                (0, 3, -1.0),
                (1, 1, 4.0),
                (2, 0, 1.0),
                (2, 2, 5.0),
            ],
        )
        .unwrap();
        let x = [1.0, 2.0, 3.0, 4.0];
        let mut y = vec![0.0; 3];
        a.matvec(&x, &mut y);
        assert_eq!(y, dense_matvec(&a.to_dense(), &x));
    }

    #[test]
    fn transpose_roundtrip_and_transposed_matvec() {
        let a = CsrMatrix::from_triplets(
            3,
            2,
            &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 3.0), (2, 1, 4.0)],
        )
        .unwrap();
        let at = a.transpose();
        assert_eq!(at.transpose().to_dense(), a.to_dense());
        let x = [1.0, -1.0, 2.0];
        let mut y1 = vec![0.0; 2];
        a.matvec_transpose(&x, &mut y1);
        let mut y2 = vec![0.0; 2];
        at.matvec(&x, &mut y2);
        assert_eq!(y1, y2);
    }

    #[test]
    fn matmul_matches_dense() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, -3.0)]).unwrap();
        let b = CsrMatrix::from_triplets(
            3,
            2,
            &[(0, 0, 4.0), (1, 0, 1.0), (1, 1, 2.0), (2, 1, -1.0)],
        )
        .unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.to_dense(), vec![vec![4.0, -2.0], vec![-3.0, -6.0]]);
    }

    #[test]
    fn gram_is_symmetric() {
        let a = CsrMatrix::from_triplets(
            4,
            3,
            &[
                (0, 0, 1.5),
                (1, 1, -2.0),
                (1, 2, 0.5),
                (2, 0, 3.0),
                (3, 2, 1.0),
            ],
        )
        .unwrap();
        let q = a.gram().unwrap();
        assert!(q.symmetry_defect() < 1e-15);
    }

    #[test]
    fn add_scaled_merges_patterns() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let b = CsrMatrix::from_triplets(2, 2, &[(0, 1, 3.0), (1, 1, 1.0)]).unwrap();
        let c = a.add_scaled(2.0, &b).unwrap();
        assert_eq!(c.to_dense(), vec![vec![1.0, 6.0], vec![0.0, 4.0]]);
    }

    #[test]
    fn cg_solves_spd_system() {
        // 1D Laplacian with Dirichlet ends: tridiag(-1, 2, -1), SPD
        let n = 50;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &t).unwrap();
        let b = vec![1.0; n];
        let (x, stats) = conjugate_gradient(&a, &b, 1e-12, 10_000).unwrap();
        assert!(stats.relative_residual <= 1e-12);
        assert!(a.residual_inf(&x, &b) < 1e-10);
    }

    #[test]
    fn cg_rejects_indefinite_matrix() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, -1.0)]).unwrap();
        let err = conjugate_gradient(&a, &[1.0, 1.0], 1e-10, 100).unwrap_err();
        assert_eq!(err.category(), "solver");
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        // upwind-ish convection-diffusion stencil, diagonally dominant
        let n = 64;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i > 0 {
                t.push((i, i - 1, -2.5));
            }
            if i + 1 < n {
                t.push((i, i + 1, -0.5));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &t).unwrap();
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; n];
        a.matvec(&x_true, &mut b);
        let (x, _) = bicgstab(&a, &b, 1e-13, 10_000).unwrap();
        for (xi, ti) in x.iter().zip(&x_true) {
            assert_relative_eq!(xi, ti, max_relative = 1e-9, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_rhs_returns_zero_solution() {
        let a = CsrMatrix::identity(5);
        let (x, stats) = conjugate_gradient(&a, &[0.0; 5], 1e-10, 10).unwrap();
        assert_eq!(x, vec![0.0; 5]);
        assert_eq!(stats.iterations, 0);
    }
}
