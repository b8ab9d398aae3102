//! Update-first lifting transforms over an even/odd block adjacency.
//!
//! Forward direction (pooling):
//!
//! ```text
//!   C = X_e + U_hat * X_o        (update)
//!   D = X_o - P_hat * C          (predict)
//! ```
//!
//! Backward direction reverses the two steps exactly, so the transform is
//! invertible in closed form regardless of the operator values:
//!
//! ```text
//!   X_o = D + P_hat * C
//!   X_e = C - U_hat * X_o
//! ```
//!
//! Updating before predicting keeps the approximation `C` a weighted average
//! of a node and its neighbors, and with the row-sum normalization used here
//! (U_hat rows sum to 1, P_hat rows to 1/2) a constant signal produces
//! exactly zero detail.

use crate::error::{CoreError, Result};
use crate::icosphere::{node_count, BlockAdjacency};
use crate::mat::Mat;
use crate::real::Real;
use crate::sparse::{spmm_into, SparseMatrix};

/// The pair of lifting operators for one level: `u_hat` (update) lives on the
/// support of M (even x odd), `p_hat` (predict) on the support of N (odd x
/// even).
#[derive(Debug, Clone)]
pub struct LiftingOperators<T = f64> {
    pub level: usize,
    pub u_hat: SparseMatrix<T>,
    pub p_hat: SparseMatrix<T>,
}

impl<T: Real> LiftingOperators<T> {
    pub fn n_even(&self) -> usize {
        self.u_hat.pattern.rows
    }

    pub fn n_odd(&self) -> usize {
        self.u_hat.pattern.cols
    }

    /// Check the normalization invariants: U_hat rows sum to 1, P_hat rows to
    /// 1/2 (within 1e-9), and all entries are finite and non-negative.
    pub fn validate(&self) -> Result<()> {
        if self.p_hat.pattern.rows != self.n_odd() || self.p_hat.pattern.cols != self.n_even() {
            return Err(CoreError::ShapeMismatch(format!(
                "P_hat is {}x{}, expected {}x{}",
                self.p_hat.pattern.rows,
                self.p_hat.pattern.cols,
                self.n_odd(),
                self.n_even()
            )));
        }
        for (what, m, target) in [("U_hat", &self.u_hat, 1.0), ("P_hat", &self.p_hat, 0.5)] {
            for &v in &m.values {
                if !v.is_finite() {
                    return Err(CoreError::NonFinite(format!("{what} entry")));
                }
                if v < T::zero() {
                    return Err(CoreError::BadData(format!("{what} has a negative entry")));
                }
            }
            for (r, s) in m.row_sums().into_iter().enumerate() {
                if (s.into_f64() - target).abs() > 1e-9 {
                    return Err(CoreError::BadData(format!(
                        "{what} row {r} sums to {} (expected {target})",
                        s.into_f64()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_f64(&self) -> LiftingOperators<f64> {
        LiftingOperators { level: self.level, u_hat: self.u_hat.to_f64(), p_hat: self.p_hat.to_f64() }
    }
}

impl LiftingOperators<f64> {
    pub fn to_real<T: Real>(&self) -> LiftingOperators<T> {
        LiftingOperators { level: self.level, u_hat: self.u_hat.to_real(), p_hat: self.p_hat.to_real() }
    }
}

/// A multi-channel signal on the level-l sphere: one row per node, one column
/// per channel. Even nodes (those inherited from level l-1) occupy the first
/// `node_count(l-1)` rows.
#[derive(Debug, Clone)]
pub struct SphericalSignal<T = f64> {
    pub level: usize,
    pub values: Mat<T>,
}

impl<T: Real> SphericalSignal<T> {
    /// Construct with the node-count and finiteness invariants enforced.
    pub fn new(level: usize, values: Mat<T>) -> Result<Self> {
        if values.rows != node_count(level) {
            return Err(CoreError::ShapeMismatch(format!(
                "level {level} signal has {} rows, expected {}",
                values.rows,
                node_count(level)
            )));
        }
        if !values.is_finite() {
            return Err(CoreError::NonFinite(format!("level {level} signal")));
        }
        Ok(SphericalSignal { level, values })
    }

    pub fn channels(&self) -> usize {
        self.values.cols
    }
}

/// Approximation (`c`, low-frequency, one row per even node) and detail (`d`,
/// high-frequency, one row per odd node) coefficients of one lifting step.
#[derive(Debug, Clone)]
pub struct SubbandPair<T = f64> {
    pub c: Mat<T>,
    pub d: Mat<T>,
}

/// Non-adaptive operators: the update row for an even node averages its odd
/// neighbors uniformly (1/k each, k = degree in M), and every predict row
/// splits its 1/2 budget evenly across the odd node's two parents (1/4 each
/// on the subdivision graph).
pub fn handcrafted_operators<T: Real>(adj: &BlockAdjacency) -> Result<LiftingOperators<T>> {
    let mut u_vals = Vec::with_capacity(adj.m.nnz());
    for r in 0..adj.m.rows {
        let deg = adj.m.row_degree(r);
        if deg == 0 {
            return Err(CoreError::EmptyRowSupport { what: "M".to_string(), row: r });
        }
        let w = T::one() / T::of(deg as f64);
        u_vals.extend(std::iter::repeat_n(w, deg));
    }
    let mut p_vals = Vec::with_capacity(adj.n.nnz());
    for r in 0..adj.n.rows {
        let deg = adj.n.row_degree(r);
        if deg == 0 {
            return Err(CoreError::EmptyRowSupport { what: "N".to_string(), row: r });
        }
        let w = T::of(0.5) / T::of(deg as f64);
        p_vals.extend(std::iter::repeat_n(w, deg));
    }
    Ok(LiftingOperators {
        level: adj.level,
        u_hat: SparseMatrix::new(std::sync::Arc::clone(&adj.m), u_vals),
        p_hat: SparseMatrix::new(std::sync::Arc::clone(&adj.n), p_vals),
    })
}

fn check_signal_shape<T: Real>(x: &SphericalSignal<T>, ops: &LiftingOperators<T>) -> Result<()> {
    if x.level != ops.level {
        return Err(CoreError::ShapeMismatch(format!(
            "signal level {} does not match operator level {}",
            x.level, ops.level
        )));
    }
    let n = ops.n_even() + ops.n_odd();
    if x.values.rows != n {
        return Err(CoreError::ShapeMismatch(format!(
            "signal has {} rows, operators expect {n}",
            x.values.rows
        )));
    }
    Ok(())
}

/// One forward lifting step: split by index, update, predict.
pub fn lift_forward<T: Real>(x: &SphericalSignal<T>, ops: &LiftingOperators<T>) -> Result<SubbandPair<T>> {
    check_signal_shape(x, ops)?;
    let n_even = ops.n_even();
    let x_e = x.values.slice_rows(0, n_even);
    let x_o = x.values.slice_rows(n_even, ops.n_odd());

    let mut c = Mat::zeros(n_even, x.values.cols);
    spmm_into(&ops.u_hat.pattern, &ops.u_hat.values, &x_o, &mut c);
    let c = x_e.add(&c);

    let mut pc = Mat::zeros(ops.n_odd(), x.values.cols);
    spmm_into(&ops.p_hat.pattern, &ops.p_hat.values, &c, &mut pc);
    let d = x_o.sub(&pc);

    Ok(SubbandPair { c, d })
}

/// One backward lifting step: undo predict, undo update, merge by index.
pub fn lift_backward<T: Real>(sub: &SubbandPair<T>, ops: &LiftingOperators<T>) -> Result<SphericalSignal<T>> {
    if sub.c.rows != ops.n_even() || sub.d.rows != ops.n_odd() || sub.c.cols != sub.d.cols {
        return Err(CoreError::ShapeMismatch(format!(
            "subband shapes ({}x{}, {}x{}) do not match operators ({} even, {} odd)",
            sub.c.rows,
            sub.c.cols,
            sub.d.rows,
            sub.d.cols,
            ops.n_even(),
            ops.n_odd()
        )));
    }
    let mut x_o = Mat::zeros(ops.n_odd(), sub.c.cols);
    spmm_into(&ops.p_hat.pattern, &ops.p_hat.values, &sub.c, &mut x_o);
    let x_o = sub.d.add(&x_o);

    let mut ux = Mat::zeros(ops.n_even(), sub.c.cols);
    spmm_into(&ops.u_hat.pattern, &ops.u_hat.values, &x_o, &mut ux);
    let x_e = sub.c.sub(&ux);

    Ok(SphericalSignal { level: ops.level, values: x_e.concat_rows(&x_o) })
}

/// Pooling: run the forward transform, keep `C` as the coarser-level signal,
/// and hand the detail back separately so a training loss can penalize it.
pub fn lift_pool<T: Real>(
    x: &SphericalSignal<T>,
    ops: &LiftingOperators<T>,
) -> Result<(SphericalSignal<T>, Mat<T>)> {
    let sub = lift_forward(x, ops)?;
    Ok((SphericalSignal { level: ops.level - 1, values: sub.c }, sub.d))
}

/// Unpooling: backward transform with zero detail.
pub fn lift_unpool<T: Real>(c: &SphericalSignal<T>, ops: &LiftingOperators<T>) -> Result<SphericalSignal<T>> {
    if c.level + 1 != ops.level {
        return Err(CoreError::ShapeMismatch(format!(
            "unpool input level {} does not match operator level {}",
            c.level, ops.level
        )));
    }
    let d = Mat::zeros(ops.n_odd(), c.values.cols);
    lift_backward(&SubbandPair { c: c.values.clone(), d }, ops)
}

/// Non-lifting pooling baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselinePool {
    /// Keep the even rows, drop the odd ones.
    Downsample,
    /// Average each even node with its odd neighbors.
    Mean,
    /// Maximum of each even node and its odd neighbors.
    Max,
}

/// Non-lifting unpooling baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineUnpool {
    /// Place the coarse signal on even indices, zeros on odd indices.
    ZeroPad,
}

pub fn baseline_pool<T: Real>(
    x: &SphericalSignal<T>,
    adj: &BlockAdjacency,
    kind: BaselinePool,
) -> Result<SphericalSignal<T>> {
    if x.level != adj.level {
        return Err(CoreError::ShapeMismatch(format!(
            "signal level {} does not match adjacency level {}",
            x.level, adj.level
        )));
    }
    let n_even = adj.m.rows;
    let n_odd = adj.m.cols;
    if x.values.rows != n_even + n_odd {
        return Err(CoreError::ShapeMismatch(format!(
            "signal has {} rows, adjacency expects {}",
            x.values.rows,
            n_even + n_odd
        )));
    }
    let x_e = x.values.slice_rows(0, n_even);
    let values = match kind {
        BaselinePool::Downsample => x_e,
        BaselinePool::Mean => {
            let mut out = Mat::zeros(n_even, x.values.cols);
            for r in 0..n_even {
                let inv = T::one() / T::of((1 + adj.m.row_degree(r)) as f64);
                for j in 0..x.values.cols {
                    let mut s = x_e.at(r, j);
                    for &c in adj.m.row_cols(r) {
                        s += x.values.at(n_even + c as usize, j);
                    }
                    *out.at_mut(r, j) = s * inv;
                }
            }
            out
        }
        BaselinePool::Max => {
            let mut out = Mat::zeros(n_even, x.values.cols);
            for r in 0..n_even {
                for j in 0..x.values.cols {
                    let mut s = x_e.at(r, j);
                    for &c in adj.m.row_cols(r) {
                        s = s.max(x.values.at(n_even + c as usize, j));
                    }
                    *out.at_mut(r, j) = s;
                }
            }
            out
        }
    };
    Ok(SphericalSignal { level: x.level - 1, values })
}

pub fn baseline_unpool<T: Real>(
    c: &SphericalSignal<T>,
    adj: &BlockAdjacency,
    kind: BaselineUnpool,
) -> Result<SphericalSignal<T>> {
    if c.level + 1 != adj.level {
        return Err(CoreError::ShapeMismatch(format!(
            "unpool input level {} does not match adjacency level {}",
            c.level, adj.level
        )));
    }
    if c.values.rows != adj.m.rows {
        return Err(CoreError::ShapeMismatch(format!(
            "coarse signal has {} rows, adjacency expects {}",
            c.values.rows, adj.m.rows
        )));
    }
    match kind {
        BaselineUnpool::ZeroPad => {
            let zeros = Mat::zeros(adj.m.cols, c.values.cols);
            Ok(SphericalSignal { level: adj.level, values: c.values.concat_rows(&zeros) })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icosphere::{build_hierarchy, split_adjacency};
    use crate::sparse::arc_pattern;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// 2 even and 2 odd nodes, every even-odd pair connected.
    fn toy_ops() -> LiftingOperators {
        let m = arc_pattern(2, 2, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let n = arc_pattern(2, 2, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        LiftingOperators {
            level: 1,
            u_hat: SparseMatrix::new(m, vec![0.5, 0.5, 0.5, 0.5]),
            p_hat: SparseMatrix::new(n, vec![0.25, 0.25, 0.25, 0.25]),
        }
    }

    fn toy_signal() -> SphericalSignal {
        SphericalSignal { level: 1, values: Mat::from_vec(4, 1, vec![1.0, 3.0, 2.0, 4.0]) }
    }

    #[test]
    fn toy_forward_matches_hand_arithmetic() {
        let sub = lift_forward(&toy_signal(), &toy_ops()).unwrap();
        assert_eq!(sub.c.data, vec![4.0, 6.0]);
        assert_eq!(sub.d.data, vec![-0.5, 1.5]);
    }

    #[test]
    fn toy_backward_recovers_input() {
        let ops = toy_ops();
        let sub = SubbandPair { c: Mat::from_vec(2, 1, vec![4.0, 6.0]), d: Mat::from_vec(2, 1, vec![-0.5, 1.5]) };
        let x = lift_backward(&sub, &ops).unwrap();
        assert_eq!(x.values.data, vec![1.0, 3.0, 2.0, 4.0]);
    }

    /// The textbook predict-first scheme (d = x_o - P x_e; c = x_e + U d)
    /// inverts the same way; kept as a 1D reference so the update-first
    /// convention above is visibly a reordering, not a different transform.
    #[test]
    fn predict_first_reference_also_inverts() {
        let x_e = [1.0, 3.0];
        let x_o = [2.0, 4.0];
        // P = 1/2 per entry (rows sum to 1), U = 1/4 per entry.
        let p = [[0.5, 0.5], [0.5, 0.5]];
        let u = [[0.25, 0.25], [0.25, 0.25]];
        let d: Vec<f64> = (0..2).map(|j| x_o[j] - p[j][0] * x_e[0] - p[j][1] * x_e[1]).collect();
        let c: Vec<f64> = (0..2).map(|i| x_e[i] + u[i][0] * d[0] + u[i][1] * d[1]).collect();
        let x_e_back: Vec<f64> = (0..2).map(|i| c[i] - u[i][0] * d[0] - u[i][1] * d[1]).collect();
        let x_o_back: Vec<f64> = (0..2).map(|j| d[j] + p[j][0] * x_e_back[0] + p[j][1] * x_e_back[1]).collect();
        assert_eq!(x_e_back, x_e);
        assert_eq!(x_o_back, x_o);
    }

    #[test]
    fn handcrafted_level1_entries() {
        let h = build_hierarchy(1).unwrap();
        let adj = split_adjacency(&h, 1).unwrap();
        let ops = handcrafted_operators::<f64>(&adj).unwrap();
        ops.validate().unwrap();
        // Every even node at level 1 is a base vertex with 5 odd neighbors.
        for &v in &ops.u_hat.values {
            assert_eq!(v, 0.2);
        }
        for &v in &ops.p_hat.values {
            assert_eq!(v, 0.25);
        }
    }

    #[test]
    fn handcrafted_level2_p_entries_quarter() {
        let h = build_hierarchy(2).unwrap();
        let adj = split_adjacency(&h, 2).unwrap();
        let ops = handcrafted_operators::<f64>(&adj).unwrap();
        ops.validate().unwrap();
        for &v in &ops.p_hat.values {
            assert_eq!(v, 0.25);
        }
        // Row sums exact, not just within tolerance.
        for s in ops.u_hat.row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_signal_doubles_and_zeroes_detail() {
        let h = build_hierarchy(2).unwrap();
        for level in 1..=2 {
            let adj = split_adjacency(&h, level).unwrap();
            let ops = handcrafted_operators::<f64>(&adj).unwrap();
            let x = SphericalSignal::new(level, Mat::filled(node_count(level), 3, 0.7)).unwrap();
            let sub = lift_forward(&x, &ops).unwrap();
            for &v in &sub.c.data {
                assert!((v - 1.4).abs() <= 1e-12);
            }
            assert!(sub.d.max_abs() <= 1e-9);
        }
    }

    #[test]
    fn zero_signal_maps_to_zero() {
        let h = build_hierarchy(1).unwrap();
        let adj = split_adjacency(&h, 1).unwrap();
        let ops = handcrafted_operators::<f64>(&adj).unwrap();
        let x = SphericalSignal::new(1, Mat::zeros(42, 2)).unwrap();
        let sub = lift_forward(&x, &ops).unwrap();
        assert_eq!(sub.c.max_abs(), 0.0);
        assert_eq!(sub.d.max_abs(), 0.0);
    }

    #[test]
    fn round_trip_random_signal() {
        let h = build_hierarchy(3).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        for level in 1..=3 {
            let adj = split_adjacency(&h, level).unwrap();
            let ops = handcrafted_operators::<f64>(&adj).unwrap();
            let x = SphericalSignal::new(
                level,
                Mat::from_fn(node_count(level), 2, |_, _| rng.gen_range(-1.0..1.0)),
            )
            .unwrap();
            let back = lift_backward(&lift_forward(&x, &ops).unwrap(), &ops).unwrap();
            let scale = x.values.max_abs().max(1.0);
            assert!(back.values.sub(&x.values).max_abs() / scale <= 1e-10);
        }
    }

    #[test]
    fn sparse_matches_dense_oracle() {
        let h = build_hierarchy(2).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        for level in 1..=2 {
            let adj = split_adjacency(&h, level).unwrap();
            let ops = handcrafted_operators::<f64>(&adj).unwrap();
            let n_even = ops.n_even();
            let x = SphericalSignal::new(
                level,
                Mat::from_fn(node_count(level), 2, |_, _| rng.gen_range(-1.0..1.0)),
            )
            .unwrap();
            let sub = lift_forward(&x, &ops).unwrap();

            let u_dense = ops.u_hat.to_dense();
            let p_dense = ops.p_hat.to_dense();
            let x_e = x.values.slice_rows(0, n_even);
            let x_o = x.values.slice_rows(n_even, ops.n_odd());
            let c_oracle = x_e.add(&u_dense.matmul(&x_o));
            let d_oracle = x_o.sub(&p_dense.matmul(&c_oracle));
            assert!(sub.c.sub(&c_oracle).max_abs() <= 1e-12);
            assert!(sub.d.sub(&d_oracle).max_abs() <= 1e-12);
        }
    }

    #[test]
    fn pool_unpool_idempotent() {
        let h = build_hierarchy(2).unwrap();
        let adj = split_adjacency(&h, 2).unwrap();
        let ops = handcrafted_operators::<f64>(&adj).unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        let c = SphericalSignal::new(1, Mat::from_fn(42, 2, |_, _| rng.gen_range(-1.0..1.0))).unwrap();
        let up = lift_unpool(&c, &ops).unwrap();
        assert_eq!(up.level, 2);
        let sub = lift_forward(&up, &ops).unwrap();
        assert!(sub.c.sub(&c.values).max_abs() <= 1e-10);
        assert!(sub.d.max_abs() <= 1e-10);
    }

    #[test]
    fn unpool_of_constant_halves() {
        let h = build_hierarchy(1).unwrap();
        let adj = split_adjacency(&h, 1).unwrap();
        let ops = handcrafted_operators::<f64>(&adj).unwrap();
        let c = SphericalSignal::new(0, Mat::filled(12, 1, 3.0)).unwrap();
        let up = lift_unpool(&c, &ops).unwrap();
        for &v in &up.values.data {
            assert!((v - 1.5).abs() <= 1e-12);
        }
    }

    #[test]
    fn unpool_of_zero_is_zero() {
        let h = build_hierarchy(1).unwrap();
        let adj = split_adjacency(&h, 1).unwrap();
        let ops = handcrafted_operators::<f64>(&adj).unwrap();
        let c = SphericalSignal::new(0, Mat::zeros(12, 2)).unwrap();
        assert_eq!(lift_unpool(&c, &ops).unwrap().values.max_abs(), 0.0);
    }

    #[test]
    fn pool_returns_coarser_level() {
        let h = build_hierarchy(2).unwrap();
        let adj = split_adjacency(&h, 2).unwrap();
        let ops = handcrafted_operators::<f64>(&adj).unwrap();
        let x = SphericalSignal::new(2, Mat::filled(162, 1, 1.0)).unwrap();
        let (c, d) = lift_pool(&x, &ops).unwrap();
        assert_eq!(c.level, 1);
        assert_eq!(c.values.rows, 42);
        assert_eq!(d.rows, 120);
        assert!(d.max_abs() <= 1e-9);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let ops = toy_ops();
        let bad = SphericalSignal { level: 1, values: Mat::zeros(5, 1) };
        assert!(lift_forward(&bad, &ops).is_err());
        let bad_level = SphericalSignal { level: 2, values: Mat::zeros(4, 1) };
        assert!(lift_forward(&bad_level, &ops).is_err());
    }

    #[test]
    fn validate_rejects_bad_row_sums() {
        let mut ops = toy_ops();
        ops.validate().unwrap();
        ops.u_hat.values[0] = 0.6;
        assert!(ops.validate().is_err());
    }

    #[test]
    fn mean_pool_toy_enumeration() {
        // Toy graph: both even nodes connect to both odd nodes, except even 1
        // drops odd 0 so the two rows have different degrees.
        let m = arc_pattern(2, 2, &[(0, 0), (0, 1), (1, 1)]);
        let adj = BlockAdjacency {
            level: 1,
            e: arc_pattern(2, 2, &[]),
            m: m.clone(),
            n: std::sync::Arc::new(m.transpose()),
            o: arc_pattern(2, 2, &[]),
        };
        let x: SphericalSignal = SphericalSignal { level: 1, values: Mat::from_vec(4, 1, vec![1.0, 3.0, 2.0, 4.0]) };
        let pooled = baseline_pool(&x, &adj, BaselinePool::Mean).unwrap();
        assert!((pooled.values.at(0, 0) - (1.0 + 2.0 + 4.0) / 3.0).abs() <= 1e-12);
        assert!((pooled.values.at(1, 0) - (3.0 + 4.0) / 2.0).abs() <= 1e-12);
        let maxed = baseline_pool(&x, &adj, BaselinePool::Max).unwrap();
        assert_eq!(maxed.values.data, vec![4.0, 4.0]);
    }

    #[test]
    fn downsample_of_constant_is_constant() {
        let h = build_hierarchy(1).unwrap();
        let adj = split_adjacency(&h, 1).unwrap();
        let x = SphericalSignal::new(1, Mat::filled(42, 2, 0.3)).unwrap();
        let pooled = baseline_pool(&x, &adj, BaselinePool::Downsample).unwrap();
        assert_eq!(pooled.values.rows, 12);
        for &v in &pooled.values.data {
            assert_eq!(v, 0.3);
        }
    }

    #[test]
    fn zero_pad_then_downsample_is_identity() {
        let h = build_hierarchy(1).unwrap();
        let adj = split_adjacency(&h, 1).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let c = SphericalSignal::new(0, Mat::from_fn(12, 2, |_, _| rng.gen_range(-1.0..1.0))).unwrap();
        let padded = baseline_unpool(&c, &adj, BaselineUnpool::ZeroPad).unwrap();
        assert_eq!(padded.values.rows, 42);
        let back = baseline_pool(&padded, &adj, BaselinePool::Downsample).unwrap();
        assert_eq!(back.values.data, c.values.data);
    }

    #[test]
    fn f32_path_round_trips() {
        let h = build_hierarchy(1).unwrap();
        let adj = split_adjacency(&h, 1).unwrap();
        let ops = handcrafted_operators::<f32>(&adj).unwrap();
        let mut rng = StdRng::seed_from_u64(9);
        let x = SphericalSignal::<f32> {
            level: 1,
            values: Mat::from_fn(42, 2, |_, _| rng.gen_range(-1.0f32..1.0)),
        };
        let back = lift_backward(&lift_forward(&x, &ops).unwrap(), &ops).unwrap();
        assert!(back.values.sub(&x.values).max_abs() <= 1e-5);
    }
}
