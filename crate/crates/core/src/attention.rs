//! Data-dependent lifting operators from masked graph attention.
//!
//! For an edge (i, j) of the cross-adjacency the raw score is
//!
//! ```text
//!   t_ij = sigma(x_i W0 w1 + x_j W0 w2)
//! ```
//!
//! with `sigma` leaky-linear. Scores are only ever evaluated on the stored
//! sparsity (the support of M for the update role, N for the predict role) —
//! the dense score matrix is never materialized — and each row is normalized
//! by a softmax over its support. Update rows then sum to 1; predict rows are
//! halved to sum to 1/2, which is exactly the normalization that makes a
//! constant signal produce zero detail.

use crate::error::{CoreError, Result};
use crate::icosphere::BlockAdjacency;
use crate::lifting::{LiftingOperators, SphericalSignal};
use crate::mat::Mat;
use crate::real::Real;
use crate::sparse::{row_softmax_over_support, SparseMatrix};
use rand::Rng;

/// Which operator an attention parameter set produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Update,
    Predict,
}

/// Parameters of one attention role: a projection `w0` (f x f0) and the two
/// attention vectors `w1`, `w2` (f0 x 1 columns) applied to source and
/// target features respectively.
#[derive(Debug, Clone)]
pub struct RoleParams<T = f64> {
    pub w0: Mat<T>,
    pub w1: Mat<T>,
    pub w2: Mat<T>,
}

impl<T: Real> RoleParams<T> {
    pub fn zeros(f: usize, f0: usize) -> Self {
        RoleParams { w0: Mat::zeros(f, f0), w1: Mat::zeros(f0, 1), w2: Mat::zeros(f0, 1) }
    }

    /// Uniform entries in (-scale, scale).
    pub fn random(f: usize, f0: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut draw = || T::of(rng.gen_range(-scale..scale));
        RoleParams {
            w0: Mat::from_fn(f, f0, |_, _| draw()),
            w1: Mat::from_fn(f0, 1, |_, _| draw()),
            w2: Mat::from_fn(f0, 1, |_, _| draw()),
        }
    }

    /// Zero projection, random attention vectors. Scores are identically
    /// zero (the operators come out handcrafted), but unlike all-zero
    /// parameters this point is not a dead saddle: the gradient with
    /// respect to `w0` is proportional to `w1`/`w2`, so training can leave
    /// the warm start.
    pub fn warm_start(f: usize, f0: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut draw = || T::of(rng.gen_range(-scale..scale));
        RoleParams {
            w0: Mat::zeros(f, f0),
            w1: Mat::from_fn(f0, 1, |_, _| draw()),
            w2: Mat::from_fn(f0, 1, |_, _| draw()),
        }
    }

    pub fn validate(&self, f: usize) -> Result<()> {
        let f0 = self.w1.rows;
        if f0 == 0 {
            return Err(CoreError::InvalidConfig("attention inner dimension f0 must be >= 1".into()));
        }
        if self.w0.rows != f || self.w0.cols != f0 || self.w1.cols != 1 || self.w2.rows != f0 || self.w2.cols != 1 {
            return Err(CoreError::ShapeMismatch(format!(
                "attention params expect w0 {f}x{f0}, w1/w2 as {f0}x1 columns"
            )));
        }
        let finite = self.w0.is_finite() && self.w1.is_finite() && self.w2.is_finite();
        if !finite {
            return Err(CoreError::NonFinite("attention parameters".into()));
        }
        Ok(())
    }

    pub fn to_f64(&self) -> RoleParams<f64> {
        RoleParams {
            w0: self.w0.to_f64(),
            w1: self.w1.to_f64(),
            w2: self.w2.to_f64(),
        }
    }
}

impl RoleParams<f64> {
    pub fn to_real<T: Real>(&self) -> RoleParams<T> {
        RoleParams {
            w0: self.w0.to_real(),
            w1: self.w1.to_real(),
            w2: self.w2.to_real(),
        }
    }
}

/// Attention parameters for one level. `predict: None` shares the update
/// parameters between both roles (one parameter set, half the count).
#[derive(Debug, Clone)]
pub struct AttentionParams<T = f64> {
    pub level: usize,
    /// Negative slope of the leaky-linear activation.
    pub alpha: f64,
    pub update: RoleParams<T>,
    pub predict: Option<RoleParams<T>>,
}

impl<T: Real> AttentionParams<T> {
    pub fn zeros(level: usize, f: usize, f0: usize, alpha: f64, share_roles: bool) -> Self {
        AttentionParams {
            level,
            alpha,
            update: RoleParams::zeros(f, f0),
            predict: (!share_roles).then(|| RoleParams::zeros(f, f0)),
        }
    }

    pub fn random(
        level: usize,
        f: usize,
        f0: usize,
        alpha: f64,
        share_roles: bool,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        AttentionParams {
            level,
            alpha,
            update: RoleParams::random(f, f0, scale, rng),
            predict: (!share_roles).then(|| RoleParams::random(f, f0, scale, rng)),
        }
    }

    /// See [`RoleParams::warm_start`].
    pub fn warm_start(
        level: usize,
        f: usize,
        f0: usize,
        alpha: f64,
        share_roles: bool,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        AttentionParams {
            level,
            alpha,
            update: RoleParams::warm_start(f, f0, scale, rng),
            predict: (!share_roles).then(|| RoleParams::warm_start(f, f0, scale, rng)),
        }
    }

    pub fn share_roles(&self) -> bool {
        self.predict.is_none()
    }

    pub fn role(&self, role: Role) -> &RoleParams<T> {
        match role {
            Role::Update => &self.update,
            Role::Predict => self.predict.as_ref().unwrap_or(&self.update),
        }
    }

    pub fn validate(&self, f: usize) -> Result<()> {
        self.update.validate(f)?;
        if let Some(p) = &self.predict {
            p.validate(f)?;
        }
        if !self.alpha.is_finite() {
            return Err(CoreError::NonFinite("attention alpha".into()));
        }
        Ok(())
    }

    pub fn to_f64(&self) -> AttentionParams<f64> {
        AttentionParams {
            level: self.level,
            alpha: self.alpha,
            update: self.update.to_f64(),
            predict: self.predict.as_ref().map(|p| p.to_f64()),
        }
    }
}

impl AttentionParams<f64> {
    pub fn to_real<T: Real>(&self) -> AttentionParams<T> {
        AttentionParams {
            level: self.level,
            alpha: self.alpha,
            update: self.update.to_real(),
            predict: self.predict.as_ref().map(|p| p.to_real()),
        }
    }
}

/// Leaky-linear activation with negative slope `alpha`.
pub fn leaky<T: Real>(alpha: f64, x: T) -> T {
    if x >= T::zero() {
        x
    } else {
        T::of(alpha) * x
    }
}

/// Raw attention score for one ordered node pair.
pub fn attention_score<T: Real>(xi: &[T], xj: &[T], p: &RoleParams<T>, alpha: f64) -> Result<T> {
    if xi.len() != p.w0.rows || xj.len() != p.w0.rows {
        return Err(CoreError::ShapeMismatch(format!(
            "attention_score expects feature length {}, got {}/{}",
            p.w0.rows,
            xi.len(),
            xj.len()
        )));
    }
    let mut a = T::zero();
    let mut b = T::zero();
    for k in 0..p.w0.cols {
        let mut hi = T::zero();
        let mut hj = T::zero();
        for (c, (&vi, &vj)) in xi.iter().zip(xj).enumerate() {
            hi += vi * p.w0.at(c, k);
            hj += vj * p.w0.at(c, k);
        }
        a += hi * p.w1.at(k, 0);
        b += hj * p.w2.at(k, 0);
    }
    Ok(leaky(alpha, a + b))
}

/// Per-node score contributions `X * (W0 * w)` as a flat vector, computed
/// once so every edge score is a two-term sum plus the activation.
fn project_scores<T: Real>(x: &Mat<T>, w0: &Mat<T>, w: &Mat<T>) -> Vec<T> {
    x.matmul(&w0.matmul(w)).data
}

/// Compute the adaptive operators for one level from pre-pooling features.
pub fn compute_operators<T: Real>(
    x: &SphericalSignal<T>,
    adj: &BlockAdjacency,
    params: &AttentionParams<T>,
) -> Result<LiftingOperators<T>> {
    let n_even = adj.m.rows;
    let n_odd = adj.m.cols;
    if x.level != adj.level || params.level != adj.level {
        return Err(CoreError::ShapeMismatch(format!(
            "levels disagree: signal {}, adjacency {}, params {}",
            x.level, adj.level, params.level
        )));
    }
    if x.values.rows != n_even + n_odd {
        return Err(CoreError::ShapeMismatch(format!(
            "signal has {} rows, adjacency expects {}",
            x.values.rows,
            n_even + n_odd
        )));
    }
    params.validate(x.values.cols)?;

    let up = params.role(Role::Update);
    let s1 = project_scores(&x.values, &up.w0, &up.w1);
    let s2 = project_scores(&x.values, &up.w0, &up.w2);
    let mut u_scores = Vec::with_capacity(adj.m.nnz());
    for r in 0..n_even {
        for &c in adj.m.row_cols(r) {
            u_scores.push(leaky(params.alpha, s1[r] + s2[n_even + c as usize]));
        }
    }
    let u_vals = row_softmax_over_support(&adj.m, &u_scores, "U scores")?;

    let pr = params.role(Role::Predict);
    let t1 = project_scores(&x.values, &pr.w0, &pr.w1);
    let t2 = project_scores(&x.values, &pr.w0, &pr.w2);
    let mut p_scores = Vec::with_capacity(adj.n.nnz());
    for r in 0..n_odd {
        for &c in adj.n.row_cols(r) {
            p_scores.push(leaky(params.alpha, t1[n_even + r] + t2[c as usize]));
        }
    }
    let half = T::of(0.5);
    let p_vals: Vec<T> = row_softmax_over_support(&adj.n, &p_scores, "P scores")?
        .into_iter()
        .map(|v| v * half)
        .collect();

    Ok(LiftingOperators {
        level: adj.level,
        u_hat: SparseMatrix::new(std::sync::Arc::clone(&adj.m), u_vals),
        p_hat: SparseMatrix::new(std::sync::Arc::clone(&adj.n), p_vals),
    })
}
