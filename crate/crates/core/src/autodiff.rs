//! Tape-based reverse-mode differentiation over the primitive set used by
//! the networks here: dense matmul, sparse-masked matmul, support-restricted
//! row softmax, edge-score gather/scatter, elementwise arithmetic and
//! rectifiers, row slicing/concatenation, reductions, and the classification
//! log-softmax. Nothing more — the engine stays small enough to audit
//! adjoint by adjoint.
//!
//! Recording is eager: every builder method computes its forward value
//! immediately with the same kernels the value-level modules use, so a
//! recorded transform is bitwise identical to the unrecorded one. The typed
//! builder API is the "supported program" contract — an unsupported
//! primitive is unrepresentable rather than a runtime error.
//!
//! Gradients of sparse-masked products stay on the mask support; adjoints
//! never densify. Masks and graph structure are constants: nothing
//! differentiates through a [`CsrPattern`].

use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::mat::Mat;
use crate::real::Real;
use crate::sparse::{spmm_into, spmm_transpose_into, CsrPattern, SparseMatrix};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    /// Constant or parameter leaf; only parameters collect gradients.
    Leaf { requires_grad: bool },
    MatMul(Var, Var),
    /// Constant sparse matrix times a variable dense matrix.
    SpmmConst(SparseMatrix<T>, Var),
    /// Variable edge values on a fixed pattern times a variable dense matrix.
    SpmmVar(Arc<CsrPattern>, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    MulElem(Var, Var),
    /// Add a 1 x cols row vector to every row.
    AddRowBroadcast(Var, Var),
    Leaky(Var, f64),
    Relu(Var),
    /// Per-edge score gather: out[k] = a[row_base + row(k)] + b[col_base + col(k)].
    EdgeScores { pattern: Arc<CsrPattern>, row_base: usize, col_base: usize, a: Var, b: Var },
    /// Softmax over each pattern row's support; input/output are nnz x 1.
    RowSoftmax(Arc<CsrPattern>, Var),
    ScalarMul(Var, f64),
    /// Frobenius-squared reduction to 1 x 1.
    SumSq(Var),
    Sum(Var),
    Mean(Var),
    /// Column means: n x c -> 1 x c.
    MeanRows(Var),
    /// Elementwise sqrt(x + eps); eps keeps the norm gradient finite at 0.
    Sqrt(Var),
    LogSoftmaxRows(Var),
    /// Mean over rows of -x[i, target_i]; input rows are log-probabilities.
    NllPick(Var, Arc<Vec<usize>>),
    SliceRows { x: Var, start: usize, len: usize },
    ConcatRows(Var, Var),
    /// Group max with argmax rows recorded at forward time (one source row
    /// per output element, row-major).
    RowGroupMax { x: Var, sources: Arc<Vec<usize>>, out_rows: usize },
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Mat<T>,
}

/// Gradient buffers produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Mat<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the output w.r.t. `v`; `None` when nothing flowed there.
    pub fn get(&self, v: Var) -> Option<&Mat<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient or zeros of the given shape.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Mat<T> {
        match self.grads[v.0] {
            Some(ref g) => g.clone(),
            None => Mat::zeros(rows, cols),
        }
    }
}

/// The recording. One tape per forward/backward pass; not shared across
/// threads — batch parallelism uses one tape per item and sums gradients
/// outside.
#[derive(Debug)]
pub struct Tape<T: Real = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn add_assign<T: Real>(dst: &mut Mat<T>, src: &Mat<T>) {
    debug_assert_eq!((dst.rows, dst.cols), (src.rows, src.cols));
    for (d, &s) in dst.data.iter_mut().zip(&src.data) {
        *d += s;
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op<T>, value: Mat<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf: no gradient is collected.
    pub fn input(&mut self, value: Mat<T>) -> Var {
        self.push(Op::Leaf { requires_grad: false }, value)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Mat<T>) -> Var {
        self.push(Op::Leaf { requires_grad: true }, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn spmm_const(&mut self, s: &SparseMatrix<T>, x: Var) -> Var {
        let mut out = Mat::zeros(s.pattern.rows, self.value(x).cols);
        spmm_into(&s.pattern, &s.values, self.value(x), &mut out);
        self.push(Op::SpmmConst(s.clone(), x), out)
    }

    /// `S(pattern, vals) * x` where the edge values are a variable nnz x 1
    /// node. Gradients reach both the values (on the support only) and `x`.
    pub fn spmm_var(&mut self, pattern: &Arc<CsrPattern>, vals: Var, x: Var) -> Var {
        let v = self.value(vals);
        assert_eq!(
            (v.rows, v.cols),
            (pattern.nnz(), 1),
            "spmm_var edge values must be nnz x 1"
        );
        let mut out = Mat::zeros(pattern.rows, self.value(x).cols);
        spmm_into(pattern, &self.nodes[vals.0].value.data, self.value(x), &mut out);
        self.push(Op::SpmmVar(Arc::clone(pattern), vals, x), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(Op::MulElem(a, b), v)
    }

    pub fn add_row_broadcast(&mut self, x: Var, row: Var) -> Var {
        let xv = self.value(x);
        let rv = self.value(row);
        assert_eq!((rv.rows, rv.cols), (1, xv.cols), "broadcast row must be 1 x cols");
        let mut out = xv.clone();
        for r in 0..out.rows {
            for c in 0..out.cols {
                *out.at_mut(r, c) += rv.at(0, c);
            }
        }
        self.push(Op::AddRowBroadcast(x, row), out)
    }

    pub fn leaky(&mut self, x: Var, alpha: f64) -> Var {
        let a = T::of(alpha);
        let v = self.value(x).map(|t| if t >= T::zero() { t } else { a * t });
        self.push(Op::Leaky(x, alpha), v)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|t| if t > T::zero() { t } else { T::zero() });
        self.push(Op::Relu(x), v)
    }

    pub fn edge_scores(
        &mut self,
        pattern: &Arc<CsrPattern>,
        row_base: usize,
        col_base: usize,
        a: Var,
        b: Var,
    ) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.cols, 1, "edge score inputs are column vectors");
        assert_eq!(bv.cols, 1, "edge score inputs are column vectors");
        let mut out = Vec::with_capacity(pattern.nnz());
        for r in 0..pattern.rows {
            for &c in pattern.row_cols(r) {
                out.push(av.at(row_base + r, 0) + bv.at(col_base + c as usize, 0));
            }
        }
        let value = Mat::from_vec(pattern.nnz(), 1, out);
        self.push(Op::EdgeScores { pattern: Arc::clone(pattern), row_base, col_base, a, b }, value)
    }

    pub fn row_softmax(&mut self, pattern: &Arc<CsrPattern>, scores: Var) -> Result<Var> {
        let s = self.value(scores);
        assert_eq!((s.rows, s.cols), (pattern.nnz(), 1), "softmax input must be nnz x 1");
        let vals = crate::sparse::row_softmax_over_support(pattern, &s.data, "tape softmax")?;
        let value = Mat::from_vec(pattern.nnz(), 1, vals);
        Ok(self.push(Op::RowSoftmax(Arc::clone(pattern), scores), value))
    }

    pub fn scalar_mul(&mut self, x: Var, k: f64) -> Var {
        let kk = T::of(k);
        let v = self.value(x).map(|t| kk * t);
        self.push(Op::ScalarMul(x, k), v)
    }

    pub fn sum_sq(&mut self, x: Var) -> Var {
        let v = Mat::scalar(self.value(x).sum_sq());
        self.push(Op::SumSq(x), v)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Mat::scalar(self.value(x).sum());
        self.push(Op::Sum(x), v)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = T::of((xv.rows * xv.cols) as f64);
        let v = Mat::scalar(xv.sum() / n);
        self.push(Op::Mean(x), v)
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let v = self.value(x).mean_rows();
        self.push(Op::MeanRows(x), v)
    }

    /// `sqrt(x + eps)` elementwise. Used on 1 x 1 squared norms; the epsilon
    /// keeps the derivative finite when the norm is exactly zero.
    pub fn sqrt_eps(&mut self, x: Var, eps: f64) -> Var {
        let e = T::of(eps);
        let v = self.value(x).map(|t| (t + e).sqrt());
        self.push(Op::Sqrt(x), v)
    }

    /// Frobenius norm as a 1 x 1 node.
    pub fn frobenius_norm(&mut self, x: Var) -> Var {
        let s = self.sum_sq(x);
        self.sqrt_eps(s, 1e-24)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let mut mx = row[0];
            for &v in row.iter() {
                if v > mx {
                    mx = v;
                }
            }
            let mut s = T::zero();
            for &v in row.iter() {
                s += (v - mx).exp();
            }
            let lse = mx + s.ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(Op::LogSoftmaxRows(x), out)
    }

    /// Mean negative log-likelihood of the target class per row.
    pub fn nll_pick(&mut self, log_probs: Var, targets: Vec<usize>) -> Var {
        let lp = self.value(log_probs);
        assert_eq!(lp.rows, targets.len(), "one target per row");
        let mut s = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            s -= lp.at(r, t);
        }
        let v = Mat::scalar(s / T::of(targets.len() as f64));
        self.push(Op::NllPick(log_probs, Arc::new(targets)), v)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).slice_rows(start, len);
        self.push(Op::SliceRows { x, start, len }, v)
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).concat_rows(self.value(b));
        self.push(Op::ConcatRows(a, b), v)
    }

    /// Per-channel max over each group {r} ∪ {col_base + c : c in pattern row
    /// r} of the rows of `x`. The winning row per output element is fixed at
    /// record time, so the backward pass is a plain scatter.
    pub fn row_group_max(&mut self, pattern: &Arc<CsrPattern>, col_base: usize, x: Var) -> Var {
        let xv = self.value(x);
        let cols = xv.cols;
        let mut out = Mat::zeros(pattern.rows, cols);
        let mut sources = Vec::with_capacity(pattern.rows * cols);
        for r in 0..pattern.rows {
            for ch in 0..cols {
                let mut best_row = r;
                let mut best = xv.at(r, ch);
                for &c in pattern.row_cols(r) {
                    let cand_row = col_base + c as usize;
                    let cand = xv.at(cand_row, ch);
                    if cand > best {
                        best = cand;
                        best_row = cand_row;
                    }
                }
                *out.at_mut(r, ch) = best;
                sources.push(best_row);
            }
        }
        self.push(Op::RowGroupMax { x, sources: Arc::new(sources), out_rows: pattern.rows }, out)
    }

    /// Reverse sweep from a scalar output, seeding with d(out)/d(out) = 1.
    pub fn backward(&mut self, output: Var) -> Result<Gradients<T>> {
        let out_val = self.value(output);
        if out_val.rows != 1 || out_val.cols != 1 {
            return Err(CoreError::ShapeMismatch(format!(
                "backward needs a scalar output, got {}x{}",
                out_val.rows, out_val.cols
            )));
        }
        let mut grads: Vec<Option<Mat<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Mat::scalar(T::one()));

        for idx in (0..=output.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            // Leaves keep their gradient; interior nodes propagate it.
            let node = &self.nodes[idx];
            match node.op.clone() {
                Op::Leaf { requires_grad } => {
                    if requires_grad {
                        grads[idx] = Some(dy);
                    }
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let da = dy.matmul(&bv.transpose());
                    let db = av.transpose().matmul(&dy);
                    self.accumulate(&mut grads, a, da);
                    self.accumulate(&mut grads, b, db);
                }
                Op::SpmmConst(s, x) => {
                    let mut dx = Mat::zeros(s.pattern.cols, dy.cols);
                    spmm_transpose_into(&s.pattern, &s.values, &dy, &mut dx);
                    self.accumulate(&mut grads, x, dx);
                }
                Op::SpmmVar(pattern, vals, x) => {
                    let xv = &self.nodes[x.0].value;
                    let vv = &self.nodes[vals.0].value;
                    let mut dvals = Mat::zeros(pattern.nnz(), 1);
                    for r in 0..pattern.rows {
                        for k in pattern.row_range(r) {
                            let c = pattern.indices[k] as usize;
                            let mut s = T::zero();
                            for ch in 0..dy.cols {
                                s += dy.at(r, ch) * xv.at(c, ch);
                            }
                            *dvals.at_mut(k, 0) = s;
                        }
                    }
                    let mut dx = Mat::zeros(pattern.cols, dy.cols);
                    spmm_transpose_into(&pattern, &vv.data, &dy, &mut dx);
                    self.accumulate(&mut grads, vals, dvals);
                    self.accumulate(&mut grads, x, dx);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, a, dy.clone());
                    self.accumulate(&mut grads, b, dy);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, a, dy.clone());
                    self.accumulate(&mut grads, b, dy.scale(T::of(-1.0)));
                }
                Op::MulElem(a, b) => {
                    let da = dy.zip(&self.nodes[b.0].value, |g, v| g * v);
                    let db = dy.zip(&self.nodes[a.0].value, |g, v| g * v);
                    self.accumulate(&mut grads, a, da);
                    self.accumulate(&mut grads, b, db);
                }
                Op::AddRowBroadcast(x, row) => {
                    let mut drow = Mat::zeros(1, dy.cols);
                    for r in 0..dy.rows {
                        for c in 0..dy.cols {
                            *drow.at_mut(0, c) += dy.at(r, c);
                        }
                    }
                    self.accumulate(&mut grads, x, dy);
                    self.accumulate(&mut grads, row, drow);
                }
                Op::Leaky(x, alpha) => {
                    let a = T::of(alpha);
                    let dx = dy.zip(&self.nodes[x.0].value, |g, v| if v >= T::zero() { g } else { a * g });
                    self.accumulate(&mut grads, x, dx);
                }
                Op::Relu(x) => {
                    let dx = dy.zip(&self.nodes[x.0].value, |g, v| if v > T::zero() { g } else { T::zero() });
                    self.accumulate(&mut grads, x, dx);
                }
                Op::EdgeScores { pattern, row_base, col_base, a, b } => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let mut da = Mat::zeros(av.rows, 1);
                    let mut db = Mat::zeros(bv.rows, 1);
                    let mut k = 0usize;
                    for r in 0..pattern.rows {
                        for &c in pattern.row_cols(r) {
                            let g = dy.at(k, 0);
                            *da.at_mut(row_base + r, 0) += g;
                            *db.at_mut(col_base + c as usize, 0) += g;
                            k += 1;
                        }
                    }
                    self.accumulate(&mut grads, a, da);
                    self.accumulate(&mut grads, b, db);
                }
                Op::RowSoftmax(pattern, scores) => {
                    // ds = y .* (dy - <y, dy>_row), rows independent.
                    let y = &node.value;
                    let mut ds = Mat::zeros(y.rows, 1);
                    for r in 0..pattern.rows {
                        let range = pattern.row_range(r);
                        let mut inner = T::zero();
                        for k in range.clone() {
                            inner += y.at(k, 0) * dy.at(k, 0);
                        }
                        for k in range {
                            *ds.at_mut(k, 0) = y.at(k, 0) * (dy.at(k, 0) - inner);
                        }
                    }
                    self.accumulate(&mut grads, scores, ds);
                }
                Op::ScalarMul(x, k) => {
                    self.accumulate(&mut grads, x, dy.scale(T::of(k)));
                }
                Op::SumSq(x) => {
                    let g = dy.at(0, 0);
                    let two = T::of(2.0);
                    let dx = self.nodes[x.0].value.map(|v| two * g * v);
                    self.accumulate(&mut grads, x, dx);
                }
                Op::Sum(x) => {
                    let g = dy.at(0, 0);
                    let xv = &self.nodes[x.0].value;
                    self.accumulate(&mut grads, x, Mat::filled(xv.rows, xv.cols, g));
                }
                Op::Mean(x) => {
                    let xv = &self.nodes[x.0].value;
                    let g = dy.at(0, 0) / T::of((xv.rows * xv.cols) as f64);
                    self.accumulate(&mut grads, x, Mat::filled(xv.rows, xv.cols, g));
                }
                Op::MeanRows(x) => {
                    let xv = &self.nodes[x.0].value;
                    let inv = T::one() / T::of(xv.rows as f64);
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        for c in 0..xv.cols {
                            *dx.at_mut(r, c) = dy.at(0, c) * inv;
                        }
                    }
                    self.accumulate(&mut grads, x, dx);
                }
                Op::Sqrt(x) => {
                    let half = T::of(0.5);
                    let dx = dy.zip(&node.value, |g, y| g * half / y);
                    self.accumulate(&mut grads, x, dx);
                }
                Op::LogSoftmaxRows(x) => {
                    let y = &node.value;
                    let mut dx = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let mut rowsum = T::zero();
                        for c in 0..y.cols {
                            rowsum += dy.at(r, c);
                        }
                        for c in 0..y.cols {
                            *dx.at_mut(r, c) = dy.at(r, c) - y.at(r, c).exp() * rowsum;
                        }
                    }
                    self.accumulate(&mut grads, x, dx);
                }
                Op::NllPick(x, targets) => {
                    let g = dy.at(0, 0) / T::of(targets.len() as f64);
                    let xv = &self.nodes[x.0].value;
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    for (r, &t) in targets.iter().enumerate() {
                        *dx.at_mut(r, t) = -g;
                    }
                    self.accumulate(&mut grads, x, dx);
                }
                Op::SliceRows { x, start, len } => {
                    let xv = &self.nodes[x.0].value;
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    for r in 0..len {
                        for c in 0..xv.cols {
                            *dx.at_mut(start + r, c) = dy.at(r, c);
                        }
                    }
                    self.accumulate(&mut grads, x, dx);
                }
                Op::ConcatRows(a, b) => {
                    let a_rows = self.nodes[a.0].value.rows;
                    let b_rows = self.nodes[b.0].value.rows;
                    self.accumulate(&mut grads, a, dy.slice_rows(0, a_rows));
                    self.accumulate(&mut grads, b, dy.slice_rows(a_rows, b_rows));
                }
                Op::RowGroupMax { x, sources, out_rows } => {
                    let xv = &self.nodes[x.0].value;
                    let mut dx = Mat::zeros(xv.rows, xv.cols);
                    let mut k = 0usize;
                    for r in 0..out_rows {
                        for ch in 0..dy.cols {
                            *dx.at_mut(sources[k], ch) += dy.at(r, ch);
                            k += 1;
                        }
                    }
                    self.accumulate(&mut grads, x, dx);
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Mat<T>>], v: Var, delta: Mat<T>) {
        match &mut grads[v.0] {
            Some(g) => add_assign(g, &delta),
            slot @ None => *slot = Some(delta),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icosphere::{build_hierarchy, node_count, split_adjacency};
    use crate::lifting::{handcrafted_operators, lift_forward, SphericalSignal};
    use crate::sparse::arc_pattern;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Central finite differences on every entry of `p0` against the tape
    /// gradient. `build` must place `p0` as the sole parameter and return a
    /// scalar output.
    fn fd_check(p0: &Mat<f64>, build: impl Fn(&mut Tape<f64>, Var) -> Var, tol: f64) {
        let mut tape = Tape::new();
        let p = tape.param(p0.clone());
        let out = build(&mut tape, p);
        let grads = tape.backward(out).unwrap();
        let g = grads.get(p).expect("parameter gradient missing");

        let eval = |m: &Mat<f64>| -> f64 {
            let mut t = Tape::new();
            let v = t.param(m.clone());
            let o = build(&mut t, v);
            t.value(o).at(0, 0)
        };
        let h = 1e-6;
        for i in 0..p0.data.len() {
            let mut plus = p0.clone();
            plus.data[i] += h;
            let mut minus = p0.clone();
            minus.data[i] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let ad = g.data[i];
            let rel = (ad - fd).abs() / fd.abs().max(ad.abs()).max(1e-2);
            assert!(rel <= tol, "entry {i}: ad {ad} vs fd {fd} (rel {rel})");
        }
    }

    #[test]
    fn matmul_matches_eager() {
        let a = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = Mat::from_vec(3, 1, vec![1.0, -1.0, 2.0]);
        let mut tape = Tape::new();
        let av = tape.input(a.clone());
        let xv = tape.input(x.clone());
        let y = tape.matmul(av, xv);
        assert_eq!(tape.value(y).data, a.matmul(&x).data);
    }

    #[test]
    fn grad_of_sum_sq_is_2x() {
        let x0 = Mat::from_vec(2, 2, vec![1.0, -2.0, 0.5, 3.0]);
        let mut tape = Tape::new();
        let x = tape.param(x0.clone());
        let s = tape.sum_sq(x);
        let grads = tape.backward(s).unwrap();
        let g = grads.get(x).unwrap();
        for (gv, xv) in g.data.iter().zip(&x0.data) {
            assert_eq!(*gv, 2.0 * xv);
        }
    }

    #[test]
    fn softmax_jacobian_closed_form() {
        // One row of three entries; downstream weighted sum w . y.
        // d(w.y)/ds_j = y_j * (w_j - w.y).
        let p = arc_pattern(1, 3, &[(0, 0), (0, 1), (0, 2)]);
        let s0 = Mat::from_vec(3, 1, vec![0.2, -0.5, 1.0]);
        let w = Mat::from_vec(1, 3, vec![2.0, -1.0, 0.5]);

        let mut tape = Tape::new();
        let s = tape.param(s0.clone());
        let y = tape.row_softmax(&p, s).unwrap();
        let wv = tape.input(w.clone());
        let out = tape.matmul(wv, y);
        let grads = tape.backward(out).unwrap();
        let g = grads.get(s).unwrap();

        let yv: Vec<f64> = {
            let mx = 1.0f64;
            let e: Vec<f64> = s0.data.iter().map(|v| (v - mx).exp()).collect();
            let t: f64 = e.iter().sum();
            e.into_iter().map(|v| v / t).collect()
        };
        let wy: f64 = w.data.iter().zip(&yv).map(|(a, b)| a * b).sum();
        for j in 0..3 {
            let expect: f64 = yv[j] * (w.data[j] - wy);
            assert!((g.data[j] - expect).abs() <= 1e-12, "{} vs {}", g.data[j], expect);
        }
    }

    #[test]
    fn recorded_lift_matches_value_path_bitwise() {
        let h = build_hierarchy(1).unwrap();
        let adj = split_adjacency(&h, 1).unwrap();
        let ops = handcrafted_operators::<f64>(&adj).unwrap();
        let mut rng = StdRng::seed_from_u64(21);
        let x = SphericalSignal::new(1, Mat::from_fn(42, 2, |_, _| rng.gen_range(-1.0..1.0))).unwrap();
        let sub = lift_forward(&x, &ops).unwrap();

        let mut tape = Tape::new();
        let xv = tape.input(x.values.clone());
        let uv = tape.input(Mat::from_vec(ops.u_hat.values.len(), 1, ops.u_hat.values.clone()));
        let pv = tape.input(Mat::from_vec(ops.p_hat.values.len(), 1, ops.p_hat.values.clone()));
        let xe = tape.slice_rows(xv, 0, 12);
        let xo = tape.slice_rows(xv, 12, 30);
        let ux = tape.spmm_var(&adj.m, uv, xo);
        let c = tape.add(xe, ux);
        let pc = tape.spmm_var(&adj.n, pv, c);
        let d = tape.sub(xo, pc);
        assert_eq!(tape.value(c).data, sub.c.data);
        assert_eq!(tape.value(d).data, sub.d.data);
    }

    #[test]
    fn fd_matmul() {
        let mut rng = StdRng::seed_from_u64(1);
        let p0 = Mat::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
        let x = Mat::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0));
        fd_check(
            &p0,
            move |t, p| {
                let xv = t.input(x.clone());
                let y = t.matmul(p, xv);
                t.sum_sq(y)
            },
            1e-6,
        );
    }

    #[test]
    fn fd_spmm_const_and_var() {
        let h = build_hierarchy(1).unwrap();
        let adj = split_adjacency(&h, 1).unwrap();
        let ops = handcrafted_operators::<f64>(&adj).unwrap();
        let mut rng = StdRng::seed_from_u64(2);

        // Through the dense operand of a constant sparse product.
        let p0 = Mat::from_fn(30, 2, |_, _| rng.gen_range(-1.0..1.0));
        let u = ops.u_hat.clone();
        fd_check(
            &p0,
            move |t, p| {
                let y = t.spmm_const(&u, p);
                t.sum_sq(y)
            },
            1e-6,
        );

        // Through the edge values of a variable sparse product.
        let v0 = Mat::from_vec(ops.u_hat.values.len(), 1, ops.u_hat.values.clone());
        let x = Mat::from_fn(30, 2, |_, _| rng.gen_range(-1.0..1.0));
        let m = std::sync::Arc::clone(&adj.m);
        fd_check(
            &v0,
            move |t, p| {
                let xv = t.input(x.clone());
                let y = t.spmm_var(&m, p, xv);
                t.sum_sq(y)
            },
            1e-6,
        );
    }

    #[test]
    fn fd_elementwise_and_broadcast() {
        let mut rng = StdRng::seed_from_u64(3);
        let p0 = Mat::from_fn(3, 3, |_, _| rng.gen_range(0.1..1.0));
        let other = Mat::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        fd_check(
            &p0,
            move |t, p| {
                let o = t.input(other.clone());
                let m = t.mul_elem(p, o);
                let s = t.sub(m, o);
                let a = t.add(s, o);
                t.sum_sq(a)
            },
            1e-6,
        );

        let b0 = Mat::from_fn(1, 4, |_, _| rng.gen_range(-1.0..1.0));
        let x = Mat::from_fn(5, 4, |_, _| rng.gen_range(-1.0..1.0));
        fd_check(
            &b0,
            move |t, p| {
                let xv = t.input(x.clone());
                let y = t.add_row_broadcast(xv, p);
                t.sum_sq(y)
            },
            1e-6,
        );
    }

    #[test]
    fn fd_activations_away_from_kinks() {
        let mut rng = StdRng::seed_from_u64(4);
        // Magnitudes >= 0.1 so the finite-difference step never crosses 0.
        let p0 = Mat::from_fn(4, 3, |_, _| {
            let v: f64 = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        });
        fd_check(
            &p0,
            |t, p| {
                let y = t.leaky(p, 0.2);
                t.sum_sq(y)
            },
            1e-6,
        );
        fd_check(
            &p0,
            |t, p| {
                let y = t.relu(p);
                t.sum_sq(y)
            },
            1e-6,
        );
    }

    #[test]
    fn fd_edge_scores_and_softmax() {
        let h = build_hierarchy(1).unwrap();
        let adj = split_adjacency(&h, 1).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        let p0 = Mat::from_fn(42, 1, |_, _| rng.gen_range(-1.0..1.0));
        let m = std::sync::Arc::clone(&adj.m);
        let x = Mat::from_fn(30, 2, |_, _| rng.gen_range(-1.0..1.0));
        fd_check(
            &p0,
            move |t, p| {
                let scores = t.edge_scores(&m, 0, 12, p, p);
                let soft = t.row_softmax(&m, scores).unwrap();
                let xv = t.input(x.clone());
                let y = t.spmm_var(&m, soft, xv);
                t.sum_sq(y)
            },
            1e-5,
        );
    }

    #[test]
    fn fd_reductions_and_norm() {
        let mut rng = StdRng::seed_from_u64(6);
        let p0 = Mat::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0));
        fd_check(
            &p0,
            |t, p| {
                let m = t.mean_rows(p);
                t.sum_sq(m)
            },
            1e-6,
        );
        fd_check(&p0, |t, p| t.mean(p), 1e-6);
        fd_check(&p0, |t, p| t.frobenius_norm(p), 1e-6);
        fd_check(
            &p0,
            |t, p| {
                let s = t.sum(p);
                t.sum_sq(s)
            },
            1e-6,
        );
    }

    #[test]
    fn fd_slice_concat() {
        let mut rng = StdRng::seed_from_u64(7);
        let p0 = Mat::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));
        fd_check(
            &p0,
            |t, p| {
                let a = t.slice_rows(p, 0, 2);
                let b = t.slice_rows(p, 2, 4);
                let c = t.concat_rows(b, a);
                let d = t.scalar_mul(c, 1.5);
                t.sum_sq(d)
            },
            1e-6,
        );
    }

    #[test]
    fn fd_row_group_max() {
        let h = build_hierarchy(1).unwrap();
        let adj = split_adjacency(&h, 1).unwrap();
        let mut rng = StdRng::seed_from_u64(23);
        // Distinct values so no group ever ties at the max.
        let p0 = Mat::from_fn(42, 2, |r, c| (r * 2 + c) as f64 * 0.013 + rng.gen_range(-0.001..0.001));
        let m = std::sync::Arc::clone(&adj.m);
        fd_check(
            &p0,
            move |t, p| {
                let y = t.row_group_max(&m, 12, p);
                t.sum_sq(y)
            },
            1e-5,
        );
    }

    #[test]
    fn row_group_max_matches_direct_max() {
        let h = build_hierarchy(1).unwrap();
        let adj = split_adjacency(&h, 1).unwrap();
        let mut rng = StdRng::seed_from_u64(24);
        let x0 = Mat::from_fn(42, 2, |_, _| rng.gen_range(-1.0..1.0));
        let mut tape = Tape::new();
        let x = tape.input(x0.clone());
        let y = tape.row_group_max(&adj.m, 12, x);
        for r in 0..12 {
            for ch in 0..2 {
                let mut best: f64 = x0.at(r, ch);
                for &c in adj.m.row_cols(r) {
                    best = best.max(x0.at(12 + c as usize, ch));
                }
                assert_eq!(tape.value(y).at(r, ch), best);
            }
        }
    }

    #[test]
    fn fd_log_softmax_nll() {
        let mut rng = StdRng::seed_from_u64(8);
        let p0 = Mat::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0));
        fd_check(
            &p0,
            |t, p| {
                let lp = t.log_softmax_rows(p);
                t.nll_pick(lp, vec![2, 0, 3])
            },
            1e-6,
        );
    }

    #[test]
    fn composite_loss_matches_unrecorded_evaluation() {
        let mut rng = StdRng::seed_from_u64(9);
        let x0 = Mat::from_fn(5, 3, |_, _| rng.gen_range(-1.0..1.0));
        let target = Mat::from_fn(5, 3, |_, _| rng.gen_range(-1.0..1.0));

        let mut tape = Tape::new();
        let x = tape.input(x0.clone());
        let tv = tape.input(target.clone());
        let diff = tape.sub(x, tv);
        let ss = tape.sum_sq(diff);
        let mse = tape.scalar_mul(ss, 1.0 / 15.0);
        let recorded = tape.value(mse).at(0, 0);

        let eager = x0.sub(&target).sum_sq() / 15.0;
        assert_eq!(recorded, eager);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Mat::zeros(2, 2));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn gradients_are_deterministic() {
        let h = build_hierarchy(1).unwrap();
        let adj = split_adjacency(&h, 1).unwrap();
        let mut rng = StdRng::seed_from_u64(10);
        let x0 = Mat::from_fn(node_count(1), 2, |_, _| rng.gen_range(-1.0..1.0));
        let run = || {
            let mut tape = Tape::new();
            let p = tape.param(x0.clone());
            let scores = {
                let col = tape.slice_rows(p, 0, 42);
                let first = tape.mean_rows(col);
                let _ = first;
                p
            };
            let xe = tape.slice_rows(scores, 0, 12);
            let xo = tape.slice_rows(scores, 12, 30);
            let hand = handcrafted_operators::<f64>(&adj).unwrap();
            let y = tape.spmm_const(&hand.u_hat, xo);
            let c = tape.add(xe, y);
            let n = tape.frobenius_norm(c);
            let g = tape.backward(n).unwrap();
            g.get(p).unwrap().data.clone()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn unused_parameter_has_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let used = tape.param(Mat::filled(2, 2, 1.0));
        let unused = tape.param(Mat::filled(2, 2, 1.0));
        let s = tape.sum_sq(used);
        let grads = tape.backward(s).unwrap();
        assert!(grads.get(used).is_some());
        assert!(grads.get(unused).is_none());
    }
}
