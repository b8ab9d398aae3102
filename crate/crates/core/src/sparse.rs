//! Row-compressed sparse patterns and the kernels shared by the value-level
//! transforms and the autodiff tape.
//!
//! A [`CsrPattern`] is structure only (no values); column indices are sorted
//! within each row so iteration order, and therefore floating-point summation
//! order, is deterministic. Values live beside a pattern, either in a
//! [`SparseMatrix`] or as a tape node.

use std::sync::Arc;

use crate::real::Real;

/// Sparsity structure in compressed-row form with sorted column indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrPattern {
    pub rows: usize,
    pub cols: usize,
    /// len = rows + 1
    pub indptr: Vec<usize>,
    /// len = nnz, sorted within each row
    pub indices: Vec<u32>,
}

impl CsrPattern {
    /// Build from (row, col) pairs; duplicates are collapsed.
    pub fn from_pairs(rows: usize, cols: usize, pairs: &[(u32, u32)]) -> Self {
        let mut sorted: Vec<(u32, u32)> = pairs.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        for &(r, c) in &sorted {
            debug_assert!((r as usize) < rows && (c as usize) < cols);
            indptr[r as usize + 1] += 1;
            indices.push(c);
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        CsrPattern { rows, cols, indptr, indices }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.indptr[r]..self.indptr[r + 1]
    }

    pub fn row_degree(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn row_cols(&self, r: usize) -> &[u32] {
        &self.indices[self.row_range(r)]
    }

    pub fn contains(&self, r: usize, c: u32) -> bool {
        self.row_cols(r).binary_search(&c).is_ok()
    }

    /// Row index of each stored entry, expanded to nnz length.
    pub fn row_of_nnz(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for _ in self.row_range(r) {
                out.push(r as u32);
            }
        }
        out
    }

    pub fn transpose(&self) -> CsrPattern {
        let pairs: Vec<(u32, u32)> = self
            .row_of_nnz()
            .into_iter()
            .zip(self.indices.iter())
            .map(|(r, &c)| (c, r))
            .collect();
        CsrPattern::from_pairs(self.cols, self.rows, &pairs)
    }

    /// Position of entry (r, c) in the nnz array, if present.
    pub fn nnz_index(&self, r: usize, c: u32) -> Option<usize> {
        let range = self.row_range(r);
        self.indices[range.clone()].binary_search(&c).ok().map(|k| range.start + k)
    }
}

/// Values on a fixed pattern.
#[derive(Debug, Clone)]
pub struct SparseMatrix<T = f64> {
    pub pattern: Arc<CsrPattern>,
    pub values: Vec<T>,
}

impl<T: Real> SparseMatrix<T> {
    pub fn new(pattern: Arc<CsrPattern>, values: Vec<T>) -> Self {
        assert_eq!(pattern.nnz(), values.len(), "value count must equal pattern nnz");
        SparseMatrix { pattern, values }
    }

    /// All-ones values (the 0/1 adjacency blocks themselves).
    pub fn ones(pattern: Arc<CsrPattern>) -> Self {
        let n = pattern.nnz();
        SparseMatrix { pattern, values: vec![T::one(); n] }
    }

    pub fn row_sums(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.pattern.rows);
        for r in 0..self.pattern.rows {
            let mut s = T::zero();
            for k in self.pattern.row_range(r) {
                s += self.values[k];
            }
            out.push(s);
        }
        out
    }

    /// `self * x` for dense row-major `x`.
    pub fn mul_dense(&self, x: &crate::mat::Mat<T>) -> crate::mat::Mat<T> {
        let mut out = crate::mat::Mat::zeros(self.pattern.rows, x.cols);
        spmm_into(&self.pattern, &self.values, x, &mut out);
        out
    }

    /// Dense copy for small oracles.
    pub fn to_dense(&self) -> crate::mat::Mat<T> {
        let mut out = crate::mat::Mat::zeros(self.pattern.rows, self.pattern.cols);
        for r in 0..self.pattern.rows {
            for k in self.pattern.row_range(r) {
                *out.at_mut(r, self.pattern.indices[k] as usize) = self.values[k];
            }
        }
        out
    }

    pub fn to_f64(&self) -> SparseMatrix<f64> {
        SparseMatrix {
            pattern: Arc::clone(&self.pattern),
            values: self.values.iter().map(|v| v.into_f64()).collect(),
        }
    }
}

impl SparseMatrix<f64> {
    pub fn to_real<T: Real>(&self) -> SparseMatrix<T> {
        SparseMatrix {
            pattern: Arc::clone(&self.pattern),
            values: self.values.iter().map(|&v| T::of(v)).collect(),
        }
    }
}

/// out = S(pattern, vals) * x. Accumulation runs row-major with sorted
/// columns, channels innermost, so results are bitwise reproducible.
pub fn spmm_into<T: Real>(pattern: &CsrPattern, vals: &[T], x: &crate::mat::Mat<T>, out: &mut crate::mat::Mat<T>) {
    assert_eq!(pattern.cols, x.rows, "spmm inner dimension mismatch");
    assert_eq!((out.rows, out.cols), (pattern.rows, x.cols), "spmm output shape mismatch");
    out.data.iter_mut().for_each(|v| *v = T::zero());
    for r in 0..pattern.rows {
        for k in pattern.row_range(r) {
            let c = pattern.indices[k] as usize;
            let v = vals[k];
            let xrow = x.row(c);
            let orow = out.row_mut(r);
            for (j, &xv) in xrow.iter().enumerate() {
                orow[j] += v * xv;
            }
        }
    }
}

/// out = S(pattern, vals)^T * x, scattering row contributions.
pub fn spmm_transpose_into<T: Real>(
    pattern: &CsrPattern,
    vals: &[T],
    x: &crate::mat::Mat<T>,
    out: &mut crate::mat::Mat<T>,
) {
    assert_eq!(pattern.rows, x.rows, "spmm_t inner dimension mismatch");
    assert_eq!((out.rows, out.cols), (pattern.cols, x.cols), "spmm_t output shape mismatch");
    out.data.iter_mut().for_each(|v| *v = T::zero());
    for r in 0..pattern.rows {
        let xrow = x.row(r);
        for k in pattern.row_range(r) {
            let c = pattern.indices[k] as usize;
            let v = vals[k];
            let orow = out.row_mut(c);
            for (j, &xv) in xrow.iter().enumerate() {
                orow[j] += v * xv;
            }
        }
    }
}

/// Row-wise softmax over each row's support. Entries outside the support do
/// not exist, so excluded positions implicitly get probability zero. The row
/// maximum is subtracted before exponentiation.
///
/// Errors with the offending row if a row has empty support.
pub fn row_softmax_over_support<T: Real>(
    pattern: &CsrPattern,
    scores: &[T],
    what: &str,
) -> Result<Vec<T>, crate::error::CoreError> {
    assert_eq!(pattern.nnz(), scores.len(), "score count must equal pattern nnz");
    let mut out = vec![T::zero(); scores.len()];
    for r in 0..pattern.rows {
        let range = pattern.row_range(r);
        if range.is_empty() {
            return Err(crate::error::CoreError::EmptyRowSupport { what: what.to_string(), row: r });
        }
        let mut m = scores[range.start];
        for k in range.clone() {
            m = m.max(scores[k]);
        }
        let mut denom = T::zero();
        for k in range.clone() {
            let e = (scores[k] - m).exp();
            out[k] = e;
            denom += e;
        }
        for k in range {
            out[k] /= denom;
        }
    }
    Ok(out)
}

pub fn arc_pattern(rows: usize, cols: usize, pairs: &[(u32, u32)]) -> Arc<CsrPattern> {
    Arc::new(CsrPattern::from_pairs(rows, cols, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;

    fn toy() -> Arc<CsrPattern> {
        // 2x3: (0,0) (0,2) (1,1)
        arc_pattern(2, 3, &[(0, 2), (0, 0), (1, 1)])
    }

    #[test]
    fn pattern_sorted_and_deduped() {
        let p = CsrPattern::from_pairs(2, 3, &[(0, 2), (0, 0), (0, 2), (1, 1)]);
        assert_eq!(p.nnz(), 3);
        assert_eq!(p.row_cols(0), &[0, 2]);
        assert_eq!(p.row_cols(1), &[1]);
    }

    #[test]
    fn spmm_matches_dense() {
        let p = toy();
        let s = SparseMatrix::new(Arc::clone(&p), vec![2.0, 3.0, 4.0]);
        let x = Mat::from_vec(3, 2, vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]);
        let y = s.mul_dense(&x);
        let yd = s.to_dense().matmul(&x);
        assert_eq!(y, yd);
    }

    #[test]
    fn transpose_apply_matches_dense() {
        let p = toy();
        let vals = vec![2.0, 3.0, 4.0];
        let x = Mat::from_vec(2, 2, vec![1.0, 5.0, 2.0, 6.0]);
        let mut y = Mat::zeros(3, 2);
        spmm_transpose_into(&p, &vals, &x, &mut y);
        let s = SparseMatrix::new(Arc::clone(&p), vals);
        let yd = s.to_dense().transpose().matmul(&x);
        assert_eq!(y, yd);
    }

    #[test]
    fn softmax_closed_form_row() {
        // scores (ln 1, ln 3) on a 2-entry support -> (0.25, 0.75)
        let p = arc_pattern(1, 2, &[(0, 0), (0, 1)]);
        let probs = row_softmax_over_support(&p, &[0.0f64, 3.0f64.ln()], "test").unwrap();
        assert!((probs[0] - 0.25).abs() < 1e-15);
        assert!((probs[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariance() {
        let p = arc_pattern(1, 3, &[(0, 0), (0, 1), (0, 2)]);
        let a: Vec<f64> = row_softmax_over_support(&p, &[0.1, -0.4, 2.0], "test").unwrap();
        let b = row_softmax_over_support(&p, &[100.1, 99.6, 102.0], "test").unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_empty_row_errors() {
        let p = arc_pattern(2, 2, &[(0, 0)]);
        assert!(row_softmax_over_support(&p, &[1.0], "test").is_err());
    }
}
