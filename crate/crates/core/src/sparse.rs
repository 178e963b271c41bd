//! Compressed sparse column storage and the direct solver wrapper used for
//! every linear system in the crate (filter operators and saddle-point
//! tangents alike).
//!
//! Patterns are built once per problem; repeated assemblies only rewrite the
//! value array, and the LU keeps its symbolic analysis across numeric
//! refactorizations.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};

use crate::error::SolveError;

/// Immutable sparsity structure in CSC layout.
#[derive(Debug)]
pub struct SparsityPattern {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

impl SparsityPattern {
    /// Builds a pattern from (row, col) pairs. Duplicates are merged.
    pub fn from_pairs(nrows: usize, ncols: usize, pairs: &mut Vec<(u32, u32)>) -> Arc<Self> {
        pairs.sort_unstable_by_key(|&(r, c)| (c, r));
        pairs.dedup();
        let mut col_ptr = vec![0usize; ncols + 1];
        for &(_, c) in pairs.iter() {
            col_ptr[c as usize + 1] += 1;
        }
        for c in 0..ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        let row_idx = pairs.iter().map(|&(r, _)| r as usize).collect();
        Arc::new(Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Index of the stored entry (row, col), if present.
    pub fn index_of(&self, row: usize, col: usize) -> Option<usize> {
        let lo = self.col_ptr[col];
        let hi = self.col_ptr[col + 1];
        self.row_idx[lo..hi]
            .binary_search(&row)
            .ok()
            .map(|k| lo + k)
    }

    pub fn faer(&self) -> SymbolicSparseColMatRef<'_, usize> {
        SymbolicSparseColMatRef::new_checked(
            self.nrows,
            self.ncols,
            &self.col_ptr,
            None,
            &self.row_idx,
        )
    }
}

/// Sparse matrix with a shared pattern and owned values.
#[derive(Debug, Clone)]
pub struct CscMatrix {
    pub pattern: Arc<SparsityPattern>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    pub fn nrows(&self) -> usize {
        self.pattern.nrows
    }

    pub fn ncols(&self) -> usize {
        self.pattern.ncols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern
            .index_of(row, col)
            .map_or(0.0, |k| self.values[k])
    }

    /// Adds into the stored entry (row, col). Panics if absent from the pattern.
    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        let k = self
            .pattern
            .index_of(row, col)
            .expect("entry outside sparsity pattern");
        self.values[k] += v;
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols());
        assert_eq!(y.len(), self.nrows());
        y.fill(0.0);
        for c in 0..self.ncols() {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for k in self.pattern.col_ptr[c]..self.pattern.col_ptr[c + 1] {
                y[self.pattern.row_idx[k]] += self.values[k] * xc;
            }
        }
    }

    /// y = A^T x.
    pub fn matvec_transpose(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.nrows());
        assert_eq!(y.len(), self.ncols());
        for c in 0..self.ncols() {
            let mut acc = 0.0;
            for k in self.pattern.col_ptr[c]..self.pattern.col_ptr[c + 1] {
                acc += self.values[k] * x[self.pattern.row_idx[k]];
            }
            y[c] = acc;
        }
    }

    pub fn faer(&self) -> SparseColMatRef<'_, usize, f64> {
        SparseColMatRef::new(self.pattern.faer(), &self.values)
    }

    /// Dense copy, for small test oracles only.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.nrows(), self.ncols());
        for c in 0..self.ncols() {
            for k in self.pattern.col_ptr[c]..self.pattern.col_ptr[c + 1] {
                d[(self.pattern.row_idx[k], c)] += self.values[k];
            }
        }
        d
    }
}

/// Sparse LU with a reusable symbolic analysis.
pub struct SparseLu {
    symbolic: SymbolicLu<usize>,
    numeric: Option<Lu<usize, f64>>,
}

impl SparseLu {
    /// Performs the symbolic analysis for the given pattern.
    pub fn analyze(pattern: &SparsityPattern) -> Result<Self, SolveError> {
        let symbolic = SymbolicLu::try_new(pattern.faer()).map_err(|_| SolveError::SingularSystem)?;
        Ok(Self {
            symbolic,
            numeric: None,
        })
    }

    /// Numeric refactorization for a matrix sharing the analyzed pattern.
    pub fn factorize(&mut self, mat: &CscMatrix) -> Result<(), SolveError> {
        let lu = Lu::try_new_with_symbolic(self.symbolic.clone(), mat.faer())
            .map_err(|_| SolveError::SingularSystem)?;
        self.numeric = Some(lu);
        Ok(())
    }

    /// Solves A x = b in place. `factorize` must have succeeded before.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        let lu = self.numeric.as_ref().expect("factorize before solve");
        let mat = faer::MatMut::from_column_major_slice_mut(rhs, n, 1);
        lu.solve_in_place(mat);
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
