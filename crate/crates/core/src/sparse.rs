//! Compressed-row sparse matrices over a fixed, structurally symmetric pattern.
//!
//! The pattern of every matrix in the solver is the node-neighbour graph of the
//! mesh plus the diagonal. It is shared between matrices through an `Arc`, so
//! matrices assembled for the same mesh can be combined entry-by-entry.

use std::sync::Arc;

use thiserror::Error;

use crate::mesh::Mesh;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("entry ({row}, {col}) is outside the sparsity pattern")]
    OutsidePattern { row: usize, col: usize },
    #[error("matrices have different sparsity patterns")]
    PatternMismatch,
    #[error("pattern is not structurally symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("vector length {got} does not match matrix dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// One off-diagonal pair `{i, j}` with `i < j` and the storage slots of
/// `(i, j)` and `(j, i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub ij: usize,
    pub ji: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityPattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    diag: Vec<usize>,
    transpose: Vec<usize>,
    edges: Vec<Edge>,
}

impl SparsityPattern {
    /// Pattern from per-row column lists. The diagonal is always added.
    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self, SparseError> {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for (i, row) in rows.iter().enumerate() {
            let mut cols: Vec<usize> = row.iter().copied().chain(std::iter::once(i)).collect();
            cols.sort_unstable();
            cols.dedup();
            if let Some(&c) = cols.iter().find(|&&c| c >= n) {
                return Err(SparseError::OutsidePattern { row: i, col: c });
            }
            col_idx.extend(cols);
            row_ptr.push(col_idx.len());
        }
        let mut pattern = Self {
            n,
            row_ptr,
            col_idx,
            diag: Vec::new(),
            transpose: Vec::new(),
            edges: Vec::new(),
        };
        pattern.diag = (0..n)
            .map(|i| pattern.find(i, i).expect("diagonal present"))
            .collect();
        let mut transpose = vec![0; pattern.col_idx.len()];
        let mut edges = Vec::new();
        for i in 0..n {
            for k in pattern.row_range(i) {
                let j = pattern.col_idx[k];
                let kt = pattern
                    .find(j, i)
                    .ok_or(SparseError::NotSymmetric { row: j, col: i })?;
                transpose[k] = kt;
                if i < j {
                    edges.push(Edge {
                        i,
                        j,
                        ij: k,
                        ji: kt,
                    });
                }
            }
        }
        pattern.transpose = transpose;
        pattern.edges = edges;
        Ok(pattern)
    }

    /// Node-neighbour graph of `mesh` plus the diagonal.
    pub fn from_mesh(mesh: &Mesh) -> Self {
        Self::from_rows(mesh.neighbor_sets()).expect("mesh neighbour relation is symmetric")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    /// Storage slot of the diagonal entry of row `i`.
    pub fn diag_slot(&self, i: usize) -> usize {
        self.diag[i]
    }

    /// Storage slot of the transposed entry: `slot(i,j) -> slot(j,i)`.
    pub fn transpose_slot(&self, k: usize) -> usize {
        self.transpose[k]
    }

    /// Off-diagonal pairs with `i < j`, in row-major order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Storage slot of `(i, j)`, if inside the pattern.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n {
            return None;
        }
        let range = self.row_range(i);
        self.col_idx[range.clone()]
            .binary_search(&j)
            .ok()
            .map(|off| range.start + off)
    }

    pub fn slot(&self, i: usize, j: usize) -> Result<usize, SparseError> {
        self.find(i, j)
            .ok_or(SparseError::OutsidePattern { row: i, col: j })
    }

    /// Lower and upper bandwidth.
    pub fn bandwidths(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for i in 0..self.n {
            for &j in &self.col_idx[self.row_range(i)] {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }
}

/// Square sparse matrix with values stored on a shared pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let nnz = pattern.nnz();
        Self {
            pattern,
            values: vec![0.0; nnz],
        }
    }

    pub fn from_values(
        pattern: Arc<SparsityPattern>,
        values: Vec<f64>,
    ) -> Result<Self, SparseError> {
        if values.len() != pattern.nnz() {
            return Err(SparseError::DimensionMismatch {
                expected: pattern.nnz(),
                got: values.len(),
            });
        }
        Ok(Self { pattern, values })
    }

    /// Build from a dense row-major matrix, storing only the given pattern.
    /// Non-zero entries outside the pattern are rejected.
    pub fn from_dense(
        pattern: Arc<SparsityPattern>,
        dense: &[Vec<f64>],
    ) -> Result<Self, SparseError> {
        let n = pattern.dim();
        if dense.len() != n {
            return Err(SparseError::DimensionMismatch {
                expected: n,
                got: dense.len(),
            });
        }
        let mut m = Self::zeros(pattern);
        for (i, row) in dense.iter().enumerate() {
            if row.len() != n {
                return Err(SparseError::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                match m.pattern.find(i, j) {
                    Some(k) => m.values[k] = v,
                    None if v != 0.0 => return Err(SparseError::OutsidePattern { row: i, col: j }),
                    None => {}
                }
            }
        }
        Ok(m)
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn same_pattern(&self, other: &SparseMatrix) -> bool {
        Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern
    }

    pub fn check_same_pattern(&self, other: &SparseMatrix) -> Result<(), SparseError> {
        if self.same_pattern(other) {
            Ok(())
        } else {
            Err(SparseError::PatternMismatch)
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Result<f64, SparseError> {
        Ok(self.values[self.pattern.slot(i, j)?])
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) -> Result<(), SparseError> {
        let k = self.pattern.slot(i, j)?;
        self.values[k] = v;
        Ok(())
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) -> Result<(), SparseError> {
        let k = self.pattern.slot(i, j)?;
        self.values[k] += v;
        Ok(())
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.values[self.pattern.diag_slot(i)]
    }

    /// `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.pattern.row_range(i);
        self.pattern.col_idx()[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    /// `y = self * x`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        let rp = self.pattern.row_ptr();
        let ci = self.pattern.col_idx();
        for (yi, w) in y.iter_mut().zip(rp.windows(2)) {
            let (lo, hi) = (w[0], w[1]);
            *yi = self.values[lo..hi]
                .iter()
                .zip(&ci[lo..hi])
                .map(|(v, &j)| v * x[j])
                .sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.dim() {
            return Err(SparseError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.dim()];
        self.mul_vec_into(x, &mut y);
        Ok(y)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.row(i).map(|(_, v)| v).sum())
            .collect()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `self += alpha * other` on a shared pattern.
    pub fn axpy(&mut self, alpha: f64, other: &SparseMatrix) -> Result<(), SparseError> {
        self.check_same_pattern(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        (0..self.values.len())
            .map(|k| (self.values[k] - self.values[self.pattern.transpose_slot(k)]).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut d = vec![vec![0.0; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Rectangle;

    #[test]
    fn mesh_pattern_is_symmetric_with_expected_nnz() {
        let mesh = Mesh::uniform(Rectangle::square(1.0), 2).unwrap();
        let p = SparsityPattern::from_mesh(&mesh);
        // corners 4, edges 6, interior 9 entries per row on a 5x5 node grid
        assert_eq!(p.nnz(), 4 * 4 + 12 * 6 + 9 * 9);
        for k in 0..p.nnz() {
            assert_eq!(p.transpose_slot(p.transpose_slot(k)), k);
        }
        assert_eq!(p.edges().len(), (p.nnz() - p.dim()) / 2);
        assert_eq!(p.bandwidths(), (6, 6));
    }

    #[test]
    fn access_outside_pattern_is_an_error() {
        let p = Arc::new(SparsityPattern::from_rows(&[vec![1], vec![0], vec![]]).unwrap());
        let mut m = SparseMatrix::zeros(p);
        assert!(m.set(0, 1, 2.0).is_ok());
        assert_eq!(
            m.get(0, 2),
            Err(SparseError::OutsidePattern { row: 0, col: 2 })
        );
        assert!(m.add(2, 0, 1.0).is_err());
        assert_eq!(m.get(2, 2), Ok(0.0));
    }

    #[test]
    fn rejects_unsymmetric_pattern() {
        assert!(matches!(
            SparsityPattern::from_rows(&[vec![1], vec![]]),
            Err(SparseError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn matvec_and_dense_roundtrip() {
        let p = Arc::new(SparsityPattern::from_rows(&[vec![1], vec![0]]).unwrap());
        let m = SparseMatrix::from_dense(p.clone(), &[vec![2.0, -1.0], vec![-1.0, 2.0]]).unwrap();
        assert_eq!(m.mul_vec(&[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(m.to_dense(), vec![vec![2.0, -1.0], vec![-1.0, 2.0]]);
        assert_eq!(m.norm_inf(), 3.0);
        assert!(m.mul_vec(&[1.0]).is_err());
        let p3 = Arc::new(SparsityPattern::from_rows(&[vec![], vec![], vec![]]).unwrap());
        assert!(
            SparseMatrix::from_dense(p3, &[vec![1.0, 1.0, 0.0], vec![0.0; 3], vec![0.0; 3]])
                .is_err()
        );
    }
}
