//! Compressed-row sparse matrices and a thin wrapper over faer's sparse LU.
//!
//! Operators are assembled as [`Csr`] from triplets (duplicates summed),
//! composed with [`Csr::matmul`], and factorized through [`SparseLu`].

use crate::error::{Error, Result};
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::Col;

/// Row-compressed sparse matrix.
#[derive(Debug, Clone)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    /// Builds from `(row, col, value)` triplets; duplicate entries are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut t: Vec<(usize, usize, f64)>) -> Csr {
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut data: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            debug_assert!(r < nrows && c < ncols);
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Csr { nrows, ncols, indptr, indices, data }
    }

    pub fn identity(n: usize) -> Csr {
        Csr::diag(&vec![1.0; n])
    }

    pub fn diag(d: &[f64]) -> Csr {
        let n = d.len();
        Csr {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: d.to_vec(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        self.indices[a..b].iter().copied().zip(self.data[a..b].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                t.push((r, c, v));
            }
        }
        t
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Csr {
        let t = self.triplets().into_iter().map(|(r, c, v)| (c, r, v)).collect();
        Csr::from_triplets(self.ncols, self.nrows, t)
    }

    pub fn matmul(&self, other: &Csr) -> Csr {
        assert_eq!(self.ncols, other.nrows);
        let mut t = Vec::new();
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut cols = Vec::new();
        for r in 0..self.nrows {
            cols.clear();
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if mark[c] != r {
                        mark[c] = r;
                        acc[c] = 0.0;
                        cols.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            cols.sort_unstable();
            for &c in &cols {
                t.push((r, c, acc[c]));
            }
        }
        Csr::from_triplets(self.nrows, other.ncols, t)
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &Csr, s: f64) -> Csr {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t = self.triplets();
        t.extend(other.triplets().into_iter().map(|(r, c, v)| (r, c, s * v)));
        Csr::from_triplets(self.nrows, self.ncols, t)
    }

    pub fn scale(&self, s: f64) -> Csr {
        let mut m = self.clone();
        m.data.iter_mut().for_each(|v| *v *= s);
        m
    }

    /// `diag(d) * self`.
    pub fn scale_rows(&self, d: &[f64]) -> Csr {
        assert_eq!(d.len(), self.nrows);
        let mut m = self.clone();
        for r in 0..self.nrows {
            for k in m.indptr[r]..m.indptr[r + 1] {
                m.data[k] *= d[r];
            }
        }
        m
    }

    pub fn to_dense(&self) -> faer::Mat<f64> {
        let mut m = faer::Mat::<f64>::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let t: Vec<Triplet<usize, usize, f64>> = self
            .triplets()
            .into_iter()
            .map(|(r, c, v)| Triplet::new(r, c, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t)
            .map_err(|e| Error::SingularSystem(format!("{e:?}")))
    }
}

/// Sparse LU factorization with one step of iterative refinement per solve.
pub struct SparseLu {
    matrix: Csr,
    symbolic: SymbolicLu<usize>,
    lu: Lu<usize, f64>,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("n", &self.matrix.nrows).finish()
    }
}

impl SparseLu {
    pub fn new(matrix: Csr) -> Result<SparseLu> {
        Self::build(matrix, None)
    }

    /// Reuses the fill-reducing ordering of `prev`; the sparsity pattern of
    /// `matrix` must match the one `prev` was built from.
    pub fn refactor(matrix: Csr, prev: &SparseLu) -> Result<SparseLu> {
        if matrix.indptr != prev.matrix.indptr || matrix.indices != prev.matrix.indices {
            return Self::build(matrix, None);
        }
        Self::build(matrix, Some(prev.symbolic.clone()))
    }

    fn build(matrix: Csr, symbolic: Option<SymbolicLu<usize>>) -> Result<SparseLu> {
        if matrix.nrows != matrix.ncols {
            return Err(Error::SingularSystem("matrix is not square".into()));
        }
        if !matrix.is_finite() {
            return Err(Error::AssemblyNaN);
        }
        let a = matrix.to_faer()?;
        let symbolic = match symbolic {
            Some(s) => s,
            None => SymbolicLu::try_new(a.symbolic()).map_err(|e| Error::SingularSystem(format!("{e:?}")))?,
        };
        let lu = Lu::try_new_with_symbolic(symbolic.clone(), a.as_ref())
            .map_err(|e| Error::SingularSystem(format!("{e:?}")))?;
        Ok(SparseLu { matrix, symbolic, lu })
    }

    pub fn matrix(&self) -> &Csr {
        &self.matrix
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.matrix.nrows;
        assert_eq!(b.len(), n);
        let rhs = Col::<f64>::from_fn(n, |i| b[i]);
        let x0 = self.lu.solve(&rhs);
        let mut x: Vec<f64> = (0..n).map(|i| x0[i]).collect();
        let ax = self.matrix.mul_vec(&x);
        let r = Col::<f64>::from_fn(n, |i| b[i] - ax[i]);
        let dx = self.lu.solve(&r);
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += dx[i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("non-finite solution".into()));
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let m = Csr::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 0, 1.0), (1, 1, 4.0)]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.mul_vec(&[1.0, 1.0]), vec![3.0, 5.0]);
    }

    #[test]
    fn matmul_and_transpose_agree_with_dense() {
        let a = Csr::from_triplets(3, 2, vec![(0, 0, 1.0), (1, 1, 2.0), (2, 0, -1.0), (2, 1, 3.0)]);
        let b = Csr::from_triplets(2, 3, vec![(0, 0, 1.0), (0, 2, 5.0), (1, 1, -2.0)]);
        let c = a.matmul(&b).to_dense();
        let cd = a.to_dense() * b.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(c[(i, j)], cd[(i, j)]);
            }
        }
        let at = a.transpose().to_dense();
        assert_eq!(at[(1, 2)], 3.0);
    }

    #[test]
    fn lu_round_trip() {
        let m = Csr::from_triplets(
            3,
            3,
            vec![(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0), (2, 2, 2.0), (2, 0, 0.5)],
        );
        let lu = SparseLu::new(m.clone()).unwrap();
        let x = lu.solve(&[1.0, 2.0, 3.0]).unwrap();
        let r = m.mul_vec(&x);
        for (ri, bi) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((ri - bi).abs() < 1e-14);
        }
    }
}
