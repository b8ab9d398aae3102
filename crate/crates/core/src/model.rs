//! Hierarchical spherical networks: feature blocks interleaved with pooling
//! on the way down (encoder), unpooling interleaved with feature blocks on
//! the way up (decoder), and a global-mean classifier head.
//!
//! The pooling/unpooling pair at each level shares one operator object per
//! forward pass: adaptive operators are computed from the pre-pooling
//! features, recorded on the tape once, and the decoder's unpool consumes the
//! very same tape nodes, so gradients reach the attention parameters through
//! both uses.
//!
//! The feature block is a two-tap graph convolution with separate weights
//! for the node itself and for its aggregated neighborhood,
//! `act(X·W_self + (Â X)·W_nbr + b)`. Keeping the taps apart lets a block
//! sharpen as well as smooth — with a single fused tap every layer is a
//! low-pass filter and the stack can never recover high-frequency content
//! lost to aggregation. Â is the neighbor adjacency, symmetrically scaled by
//! degree and then row-normalized, so it is exactly row-stochastic: a
//! constant signal stays constant under aggregation and the conv maps it to
//! the constant `c·(W_self + W_nbr)`. The plain symmetric scaling alone is
//! only approximately stochastic on a mesh with both degree-5 and degree-6
//! nodes, which would leak energy into the detail band for constant inputs;
//! the extra row normalization removes that.

use std::sync::Arc;

use rand::Rng;

use crate::attention::AttentionParams;
use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{CoreError, Result};
use crate::icosphere::{node_count, split_adjacency, BlockAdjacency, IcosphereHierarchy};
use crate::mat::Mat;
use crate::real::Real;
use crate::sparse::{CsrPattern, SparseMatrix};
use serde::{Deserialize, Serialize};

/// Pooling flavor used between consecutive levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    LiftAdaptive,
    LiftHandcrafted,
    Downsample,
    Mean,
    Max,
}

impl PoolKind {
    pub fn is_lifting(self) -> bool {
        matches!(self, PoolKind::LiftAdaptive | PoolKind::LiftHandcrafted)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lift_adaptive" => Ok(PoolKind::LiftAdaptive),
            "lift_handcrafted" => Ok(PoolKind::LiftHandcrafted),
            "downsample" => Ok(PoolKind::Downsample),
            "mean" => Ok(PoolKind::Mean),
            "max" => Ok(PoolKind::Max),
            other => Err(CoreError::InvalidConfig(format!("unknown pooling kind '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PoolKind::LiftAdaptive => "lift_adaptive",
            PoolKind::LiftHandcrafted => "lift_handcrafted",
            PoolKind::Downsample => "downsample",
            PoolKind::Mean => "mean",
            PoolKind::Max => "max",
        }
    }
}

/// What the network is trained to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    Reconstruction,
    Classification { classes: usize },
}

/// Architecture plus regularization weights. `channels[d]` is the feature
/// count at depth d (d = 0 at `max_level`); the encoder block at depth d maps
/// `channels[d]` to `channels[d+1]` before pooling one level down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub max_level: usize,
    pub min_level: usize,
    pub channels: Vec<usize>,
    /// One entry per pooling step, outermost (max_level) first.
    pub pooling: Vec<PoolKind>,
    pub task: TaskKind,
    pub lambda: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Attention projection width f0.
    pub attention_dim: usize,
    /// Negative slope of the attention activation.
    pub alpha: f64,
    /// Share one attention parameter set between update and predict roles.
    pub share_roles: bool,
    /// Nonlinearity of the feature blocks (the decoder's outermost block is
    /// always affine). Linear turns the reconstruction path into a linear
    /// autoencoder, which isolates the pooling operators in comparisons.
    #[serde(default)]
    pub activation: Activation,
}

impl NetworkConfig {
    /// Uniform pooling kind across all steps.
    pub fn uniform(
        max_level: usize,
        min_level: usize,
        channels: Vec<usize>,
        kind: PoolKind,
        task: TaskKind,
    ) -> Self {
        let steps = max_level - min_level;
        NetworkConfig {
            max_level,
            min_level,
            channels,
            pooling: vec![kind; steps],
            task,
            lambda: 0.1,
            gamma: 0.01,
            seed: 0,
            attention_dim: 8,
            alpha: 0.2,
            share_roles: false,
            activation: Activation::Relu,
        }
    }

    pub fn depth(&self) -> usize {
        self.max_level - self.min_level
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_level >= self.max_level {
            return Err(CoreError::InvalidConfig(format!(
                "min_level {} must be below max_level {}",
                self.min_level, self.max_level
            )));
        }
        if self.channels.len() != self.depth() + 1 {
            return Err(CoreError::InvalidConfig(format!(
                "channels has {} entries, expected {} for levels {}..={}",
                self.channels.len(),
                self.depth() + 1,
                self.min_level,
                self.max_level
            )));
        }
        if self.pooling.len() != self.depth() {
            return Err(CoreError::InvalidConfig(format!(
                "pooling has {} entries, expected {}",
                self.pooling.len(),
                self.depth()
            )));
        }
        if self.channels.contains(&0) || self.attention_dim == 0 {
            return Err(CoreError::InvalidConfig("channel and attention dims must be >= 1".into()));
        }
        if self.lambda < 0.0 || self.gamma < 0.0 {
            return Err(CoreError::InvalidConfig("lambda and gamma must be nonnegative".into()));
        }
        if let TaskKind::Classification { classes } = self.task {
            if classes < 2 {
                return Err(CoreError::InvalidConfig("classification needs >= 2 classes".into()));
            }
        }
        Ok(())
    }
}

/// Nonlinearity applied after a feature block's affine part.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Linear,
}

/// Two-tap graph convolution `act(X·W_self + (Â X)·W_nbr + b)` with the
/// row-stochastic neighbor aggregation described at module level.
#[derive(Debug, Clone)]
pub struct GraphConvBlock {
    pub weight: Mat<f64>,
    pub weight_nbr: Mat<f64>,
    pub bias: Mat<f64>,
    pub activation: Activation,
}

impl GraphConvBlock {
    pub fn init(f_in: usize, f_out: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        // Two taps sum into each output, so the effective fan-in doubles.
        let s = 1.0 / ((2 * f_in) as f64).sqrt();
        GraphConvBlock {
            weight: Mat::from_fn(f_in, f_out, |_, _| rng.gen_range(-s..s)),
            weight_nbr: Mat::from_fn(f_in, f_out, |_, _| rng.gen_range(-s..s)),
            bias: Mat::zeros(1, f_out),
            activation,
        }
    }
}

/// A feature block: either a trainable graph convolution or a pass-through
/// (used when a network should act purely as a lifting pyramid).
#[derive(Debug, Clone)]
pub enum ConvBlock {
    Graph(GraphConvBlock),
    Identity,
}

/// All trainable state of one network.
#[derive(Debug, Clone)]
pub struct ModelParams {
    /// Encoder blocks, depth order (index d acts at level max_level - d).
    pub encoder: Vec<ConvBlock>,
    /// Decoder blocks, same indexing (index d acts at level max_level - d);
    /// only present for reconstruction tasks.
    pub decoder: Vec<ConvBlock>,
    /// Classifier head (weight, bias); only for classification tasks.
    pub head: Option<(Mat<f64>, Mat<f64>)>,
    /// Attention parameters per pooling step, aligned with cfg.pooling;
    /// `None` at steps that do not adapt.
    pub attention: Vec<Option<AttentionParams<f64>>>,
}

impl ModelParams {
    /// Fresh parameters: fan-in-scaled uniform feature weights, zero biases,
    /// and warm-started attention — zero projections, so the operators start
    /// exactly at the handcrafted wavelets, with random attention vectors so
    /// the projections still receive gradient.
    pub fn init(cfg: &NetworkConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let depth = cfg.depth();
        let mut encoder = Vec::with_capacity(depth);
        for d in 0..depth {
            encoder.push(ConvBlock::Graph(GraphConvBlock::init(
                cfg.channels[d],
                cfg.channels[d + 1],
                cfg.activation,
                rng,
            )));
        }
        let mut decoder = Vec::new();
        let mut head = None;
        match cfg.task {
            TaskKind::Reconstruction => {
                for d in 0..depth {
                    // The outermost block emits the reconstruction, so it is
                    // always affine.
                    let activation = if d == 0 { Activation::Linear } else { cfg.activation };
                    decoder.push(ConvBlock::Graph(GraphConvBlock::init(
                        cfg.channels[d + 1],
                        cfg.channels[d],
                        activation,
                        rng,
                    )));
                }
            }
            TaskKind::Classification { classes } => {
                let f = *cfg.channels.last().expect("validated non-empty");
                let s = 1.0 / (f as f64).sqrt();
                head = Some((Mat::from_fn(f, classes, |_, _| rng.gen_range(-s..s)), Mat::zeros(1, classes)));
            }
        }
        let mut attention = Vec::with_capacity(depth);
        for (d, kind) in cfg.pooling.iter().enumerate() {
            attention.push(match kind {
                PoolKind::LiftAdaptive => Some(AttentionParams::warm_start(
                    cfg.max_level - d,
                    cfg.channels[d + 1],
                    cfg.attention_dim,
                    cfg.alpha,
                    cfg.share_roles,
                    1.0,
                    rng,
                )),
                _ => None,
            });
        }
        Ok(ModelParams { encoder, decoder, head, attention })
    }

    /// Visit every trainable matrix in a fixed order (encoder, decoder,
    /// head, attention). The optimizer and the tape binding both rely on
    /// this order being stable.
    pub fn for_each_param(&self, f: &mut impl FnMut(&Mat<f64>)) {
        for block in self.encoder.iter().chain(&self.decoder) {
            if let ConvBlock::Graph(g) = block {
                f(&g.weight);
                f(&g.weight_nbr);
                f(&g.bias);
            }
        }
        if let Some((w, b)) = &self.head {
            f(w);
            f(b);
        }
        for attn in self.attention.iter().flatten() {
            f(&attn.update.w0);
            f(&attn.update.w1);
            f(&attn.update.w2);
            if let Some(p) = &attn.predict {
                f(&p.w0);
                f(&p.w1);
                f(&p.w2);
            }
        }
    }

    pub fn for_each_param_mut(&mut self, f: &mut impl FnMut(&mut Mat<f64>)) {
        for block in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            if let ConvBlock::Graph(g) = block {
                f(&mut g.weight);
                f(&mut g.weight_nbr);
                f(&mut g.bias);
            }
        }
        if let Some((w, b)) = &mut self.head {
            f(w);
            f(b);
        }
        for attn in self.attention.iter_mut().flatten() {
            f(&mut attn.update.w0);
            f(&mut attn.update.w1);
            f(&mut attn.update.w2);
            if let Some(p) = &mut attn.predict {
                f(&mut p.w0);
                f(&mut p.w1);
                f(&mut p.w2);
            }
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |m| n += m.data.len());
        n
    }

    /// Check that every parameter matrix has the shape `cfg` dictates; the
    /// guard applied when a checkpoint is loaded against a configuration.
    pub fn validate_for(&self, cfg: &NetworkConfig) -> Result<()> {
        cfg.validate()?;
        let depth = cfg.depth();
        let fail = |what: String| Err(CoreError::CheckpointMismatch(what));
        if self.encoder.len() != depth {
            return fail(format!("{} encoder blocks, expected {depth}", self.encoder.len()));
        }
        let expect_dec = if matches!(cfg.task, TaskKind::Reconstruction) { depth } else { 0 };
        if self.decoder.len() != expect_dec {
            return fail(format!("{} decoder blocks, expected {expect_dec}", self.decoder.len()));
        }
        let check_block = |b: &ConvBlock, f_in: usize, f_out: usize, what: &str| {
            if let ConvBlock::Graph(g) = b {
                if (g.weight.rows, g.weight.cols) != (f_in, f_out)
                    || (g.weight_nbr.rows, g.weight_nbr.cols) != (f_in, f_out)
                    || (g.bias.rows, g.bias.cols) != (1, f_out)
                {
                    return fail(format!(
                        "{what} is {}x{}, expected {f_in}x{f_out}",
                        g.weight.rows, g.weight.cols
                    ));
                }
            }
            Ok(())
        };
        for d in 0..depth {
            check_block(&self.encoder[d], cfg.channels[d], cfg.channels[d + 1], "encoder block")?;
        }
        for d in 0..expect_dec {
            check_block(&self.decoder[d], cfg.channels[d + 1], cfg.channels[d], "decoder block")?;
        }
        match (&cfg.task, &self.head) {
            (TaskKind::Classification { classes }, Some((w, b))) => {
                let f = *cfg.channels.last().expect("validated non-empty");
                if (w.rows, w.cols) != (f, *classes) || (b.rows, b.cols) != (1, *classes) {
                    return fail(format!("head is {}x{}, expected {f}x{classes}", w.rows, w.cols));
                }
            }
            (TaskKind::Classification { .. }, None) => return fail("head missing".into()),
            (TaskKind::Reconstruction, Some(_)) => return fail("unexpected head".into()),
            (TaskKind::Reconstruction, None) => {}
        }
        if self.attention.len() != depth {
            return fail(format!("{} attention slots, expected {depth}", self.attention.len()));
        }
        for (d, (kind, slot)) in cfg.pooling.iter().zip(&self.attention).enumerate() {
            match (kind, slot) {
                (PoolKind::LiftAdaptive, Some(attn)) => {
                    let f = cfg.channels[d + 1];
                    let f0 = cfg.attention_dim;
                    let mut roles = vec![&attn.update];
                    if let Some(p) = &attn.predict {
                        roles.push(p);
                    }
                    if attn.predict.is_some() == cfg.share_roles {
                        return fail(format!("attention step {d} role sharing disagrees"));
                    }
                    for r in roles {
                        if (r.w0.rows, r.w0.cols) != (f, f0)
                            || (r.w1.rows, r.w1.cols) != (f0, 1)
                            || (r.w2.rows, r.w2.cols) != (f0, 1)
                        {
                            return fail(format!("attention step {d} shaped for other dims"));
                        }
                    }
                }
                (PoolKind::LiftAdaptive, None) => {
                    return fail(format!("attention step {d} missing"));
                }
                (_, Some(_)) => return fail(format!("attention step {d} unexpected")),
                (_, None) => {}
            }
        }
        Ok(())
    }
}

/// Per-run constants derived from the mesh: block adjacencies for each
/// pooling step and aggregation matrices for each level that hosts a
/// feature block.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub cfg: NetworkConfig,
    /// adjacency[d] splits level max_level - d (d-th pooling step).
    pub adjacency: Vec<BlockAdjacency>,
    /// agg[d] aggregates on level max_level - d.
    pub agg: Vec<SparseMatrix<f64>>,
    /// mean_mat[d] is the mean-pooling matrix for step d (built for every
    /// step; only Mean pooling reads it).
    pub mean_mat: Vec<SparseMatrix<f64>>,
}

/// Neighbor adjacency of the level graph (no self-loops), symmetrically
/// degree-scaled and then row-normalized to exactly row-stochastic. The
/// conv's self tap lives in its own weight matrix, so the aggregation must
/// not mix the node back in.
pub fn aggregation_matrix(h: &IcosphereHierarchy, level: usize) -> SparseMatrix<f64> {
    let n = node_count(level);
    let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(h.edges(level).len() * 2);
    for &(a, b) in h.edges(level) {
        pairs.push((a, b));
        pairs.push((b, a));
    }
    let pattern = Arc::new(CsrPattern::from_pairs(n, n, &pairs));
    let degree: Vec<f64> = (0..n).map(|r| pattern.row_degree(r) as f64).collect();
    let mut values = Vec::with_capacity(pattern.nnz());
    for r in 0..n {
        let mut row = Vec::with_capacity(pattern.row_degree(r));
        let mut sum = 0.0;
        for &c in pattern.row_cols(r) {
            let v = 1.0 / (degree[r] * degree[c as usize]).sqrt();
            sum += v;
            row.push(v);
        }
        values.extend(row.into_iter().map(|v| v / sum));
    }
    SparseMatrix::new(pattern, values)
}

impl ModelContext {
    pub fn new(h: &IcosphereHierarchy, cfg: NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.max_level > h.max_level() {
            return Err(CoreError::LevelOutOfRange {
                level: cfg.max_level,
                reason: format!("mesh only reaches level {}", h.max_level()),
            });
        }
        let mut adjacency = Vec::with_capacity(cfg.depth());
        let mut agg = Vec::with_capacity(cfg.depth());
        let mut mean_mat = Vec::with_capacity(cfg.depth());
        for d in 0..cfg.depth() {
            let level = cfg.max_level - d;
            let adj = split_adjacency(h, level)?;
            agg.push(aggregation_matrix(h, level));
            mean_mat.push(mean_pool_matrix(&adj));
            adjacency.push(adj);
        }
        Ok(ModelContext { cfg, adjacency, agg, mean_mat })
    }
}

/// Averaging matrix for baseline mean pooling: row i covers even node i and
/// its odd neighbors, each weighted 1/(1+deg).
fn mean_pool_matrix(adj: &BlockAdjacency) -> SparseMatrix<f64> {
    let n_even = adj.m.rows;
    let n = n_even + adj.m.cols;
    let mut pairs = Vec::new();
    for r in 0..n_even {
        pairs.push((r as u32, r as u32));
        for &c in adj.m.row_cols(r) {
            pairs.push((r as u32, n_even as u32 + c));
        }
    }
    let pattern = Arc::new(CsrPattern::from_pairs(n_even, n, &pairs));
    let mut values = Vec::with_capacity(pattern.nnz());
    for r in 0..n_even {
        let w = 1.0 / pattern.row_degree(r) as f64;
        values.extend(std::iter::repeat_n(w, pattern.row_degree(r)));
    }
    SparseMatrix::new(pattern, values)
}

/// Tape handles of one attention parameter set.
#[derive(Debug, Clone, Copy)]
pub struct BoundAttention {
    pub update: (Var, Var, Var),
    pub predict: Option<(Var, Var, Var)>,
}

/// Tape handles of the bound parameters. `vars` lists them flat in visitor
/// order (the optimizer's view); the structured fields address the same
/// handles by role.
#[derive(Debug)]
pub struct BoundParams {
    pub vars: Vec<Var>,
    /// (W_self, W_nbr, bias) per graph block.
    pub encoder: Vec<Option<(Var, Var, Var)>>,
    pub decoder: Vec<Option<(Var, Var, Var)>>,
    pub head: Option<(Var, Var)>,
    pub attention: Vec<Option<BoundAttention>>,
}

/// Register every parameter on the tape (converted to the compute dtype),
/// creating nodes in visitor order so the flat list aligns with
/// `for_each_param`.
pub fn bind_params<T: Real>(tape: &mut Tape<T>, params: &ModelParams) -> BoundParams {
    fn push<T: Real>(tape: &mut Tape<T>, vars: &mut Vec<Var>, m: &Mat<f64>) -> Var {
        let v = tape.param(m.to_real::<T>());
        vars.push(v);
        v
    }
    fn bind_block<T: Real>(
        tape: &mut Tape<T>,
        vars: &mut Vec<Var>,
        b: &ConvBlock,
    ) -> Option<(Var, Var, Var)> {
        match b {
            ConvBlock::Graph(g) => {
                let w = push(tape, vars, &g.weight);
                let w_nbr = push(tape, vars, &g.weight_nbr);
                let bias = push(tape, vars, &g.bias);
                Some((w, w_nbr, bias))
            }
            ConvBlock::Identity => None,
        }
    }

    let mut vars = Vec::new();
    let mut encoder = Vec::with_capacity(params.encoder.len());
    for b in &params.encoder {
        encoder.push(bind_block(tape, &mut vars, b));
    }
    let mut decoder = Vec::with_capacity(params.decoder.len());
    for b in &params.decoder {
        decoder.push(bind_block(tape, &mut vars, b));
    }
    let head = params.head.as_ref().map(|(w, b)| {
        let wv = push(tape, &mut vars, w);
        let bv = push(tape, &mut vars, b);
        (wv, bv)
    });
    let mut attention = Vec::with_capacity(params.attention.len());
    for a in &params.attention {
        attention.push(a.as_ref().map(|attn| {
            let update = (
                push(tape, &mut vars, &attn.update.w0),
                push(tape, &mut vars, &attn.update.w1),
                push(tape, &mut vars, &attn.update.w2),
            );
            let predict = attn.predict.as_ref().map(|p| {
                (
                    push(tape, &mut vars, &p.w0),
                    push(tape, &mut vars, &p.w1),
                    push(tape, &mut vars, &p.w2),
                )
            });
            BoundAttention { update, predict }
        }));
    }
    BoundParams { vars, encoder, decoder, head, attention }
}

/// Pull the gradient for every bound parameter back to f64, zeros where no
/// gradient flowed, in the same visitor order.
pub fn collect_grads<T: Real>(
    tape: &Tape<T>,
    bound: &BoundParams,
    grads: &Gradients<T>,
) -> Vec<Mat<f64>> {
    bound
        .vars
        .iter()
        .map(|&v| {
            let val = tape.value(v);
            grads.get_or_zeros(v, val.rows, val.cols).to_f64()
        })
        .collect()
}

/// Cached operator tape nodes for one pooling step.
#[derive(Debug, Clone, Copy)]
pub struct CachedOps {
    pub level: usize,
    pub u_vals: Var,
    pub p_vals: Var,
}

/// Everything the encoder hands back: the coarse code plus the per-step
/// loss ingredients and the operator cache for the decoder.
#[derive(Debug)]
pub struct EncoderOutput {
    pub code: Var,
    /// Detail coefficients per lifting step (empty entries skipped).
    pub details: Vec<Var>,
    /// (mean of pre-pooling features, mean of pooled features) per step.
    pub mean_pairs: Vec<(Var, Var)>,
    /// One entry per pooling step; None for baseline pooling.
    pub op_cache: Vec<Option<CachedOps>>,
}

fn conv_forward<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    block: &ConvBlock,
    agg: &SparseMatrix<f64>,
    bound_block: Option<(Var, Var, Var)>,
) -> Var {
    match block {
        ConvBlock::Identity => x,
        ConvBlock::Graph(g) => {
            let (w, w_nbr, b) = bound_block.expect("graph block must have bound parameters");
            let self_term = tape.matmul(x, w);
            let aggregated = tape.spmm_const(&agg.to_real::<T>(), x);
            let nbr_term = tape.matmul(aggregated, w_nbr);
            let summed = tape.add(self_term, nbr_term);
            let biased = tape.add_row_broadcast(summed, b);
            match g.activation {
                Activation::Relu => tape.relu(biased),
                Activation::Linear => biased,
            }
        }
    }
}

/// Record the attention operators for one step; returns (u_vals, p_vals)
/// tape nodes shaped nnz x 1. Mirrors `attention::compute_operators` with
/// the same kernels, so values agree bitwise with the unrecorded path.
fn record_attention<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    adj: &BlockAdjacency,
    alpha: f64,
    bound: &BoundAttention,
) -> Result<(Var, Var)> {
    let n_even = adj.m.rows;
    let (u_w0, u_w1, u_w2) = bound.update;
    let (p_w0, p_w1, p_w2) = bound.predict.unwrap_or(bound.update);

    let q1 = tape.matmul(u_w0, u_w1);
    let s1 = tape.matmul(x, q1);
    let q2 = tape.matmul(u_w0, u_w2);
    let s2 = tape.matmul(x, q2);
    let raw_u = tape.edge_scores(&adj.m, 0, n_even, s1, s2);
    let act_u = tape.leaky(raw_u, alpha);
    let u_vals = tape.row_softmax(&adj.m, act_u)?;

    let r1 = tape.matmul(p_w0, p_w1);
    let t1 = tape.matmul(x, r1);
    let r2 = tape.matmul(p_w0, p_w2);
    let t2 = tape.matmul(x, r2);
    let raw_p = tape.edge_scores(&adj.n, n_even, 0, t1, t2);
    let act_p = tape.leaky(raw_p, alpha);
    let soft_p = tape.row_softmax(&adj.n, act_p)?;
    let p_vals = tape.scalar_mul(soft_p, 0.5);

    Ok((u_vals, p_vals))
}

/// Handcrafted operator values as constant tape nodes.
fn record_handcrafted<T: Real>(tape: &mut Tape<T>, adj: &BlockAdjacency) -> Result<(Var, Var)> {
    let ops = crate::lifting::handcrafted_operators::<T>(adj)?;
    let u = tape.input(Mat::from_vec(ops.u_hat.values.len(), 1, ops.u_hat.values));
    let p = tape.input(Mat::from_vec(ops.p_hat.values.len(), 1, ops.p_hat.values));
    Ok((u, p))
}

/// One lifting pool on the tape. Returns (c, d).
fn record_lift_pool<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    adj: &BlockAdjacency,
    u_vals: Var,
    p_vals: Var,
) -> (Var, Var) {
    let n_even = adj.m.rows;
    let n_odd = adj.m.cols;
    let x_e = tape.slice_rows(x, 0, n_even);
    let x_o = tape.slice_rows(x, n_even, n_odd);
    let ux = tape.spmm_var(&adj.m, u_vals, x_o);
    let c = tape.add(x_e, ux);
    let pc = tape.spmm_var(&adj.n, p_vals, c);
    let d = tape.sub(x_o, pc);
    (c, d)
}

/// One lifting unpool (zero detail) on the tape.
fn record_lift_unpool<T: Real>(
    tape: &mut Tape<T>,
    c: Var,
    adj: &BlockAdjacency,
    u_vals: Var,
    p_vals: Var,
) -> Var {
    let x_o = tape.spmm_var(&adj.n, p_vals, c);
    let ux = tape.spmm_var(&adj.m, u_vals, x_o);
    let x_e = tape.sub(c, ux);
    tape.concat_rows(x_e, x_o)
}

/// Run the encoder: conv at each level, then pool one level down, collecting
/// details, mean pairs, and cached operators along the way.
///
/// `bound` must come from `bind_params` on the same `ModelParams`; the
/// decoder and head consume the remaining cursor positions, so encoder-only
/// use still binds everything.
pub fn encoder_forward<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    ctx: &ModelContext,
    params: &ModelParams,
    bound: &BoundParams,
) -> Result<EncoderOutput> {
    let cfg = &ctx.cfg;
    if tape.value(x).rows != node_count(cfg.max_level) {
        return Err(CoreError::ShapeMismatch(format!(
            "input has {} rows, level {} needs {}",
            tape.value(x).rows,
            cfg.max_level,
            node_count(cfg.max_level)
        )));
    }
    if tape.value(x).cols != cfg.channels[0] {
        return Err(CoreError::ShapeMismatch(format!(
            "input has {} channels, config expects {}",
            tape.value(x).cols,
            cfg.channels[0]
        )));
    }
    let mut h = x;
    let mut details = Vec::new();
    let mut mean_pairs = Vec::new();
    let mut op_cache = Vec::with_capacity(cfg.depth());

    for d in 0..cfg.depth() {
        let adj = &ctx.adjacency[d];
        h = conv_forward(tape, h, &params.encoder[d], &ctx.agg[d], bound.encoder[d]);
        let pre_mean = tape.mean_rows(h);
        let kind = cfg.pooling[d];
        let pooled = match kind {
            PoolKind::LiftAdaptive => {
                let attn = params.attention[d].as_ref().ok_or_else(|| {
                    CoreError::InvalidConfig(format!("pooling step {d} adapts but has no attention params"))
                })?;
                let bound_attn = bound.attention[d].as_ref().ok_or_else(|| {
                    CoreError::InvalidConfig(format!("pooling step {d} has unbound attention params"))
                })?;
                let (u_vals, p_vals) = record_attention(tape, h, adj, attn.alpha, bound_attn)?;
                let (c, det) = record_lift_pool(tape, h, adj, u_vals, p_vals);
                details.push(det);
                op_cache.push(Some(CachedOps { level: adj.level, u_vals, p_vals }));
                c
            }
            PoolKind::LiftHandcrafted => {
                let (u_vals, p_vals) = record_handcrafted(tape, adj)?;
                let (c, det) = record_lift_pool(tape, h, adj, u_vals, p_vals);
                details.push(det);
                op_cache.push(Some(CachedOps { level: adj.level, u_vals, p_vals }));
                c
            }
            PoolKind::Downsample => {
                op_cache.push(None);
                tape.slice_rows(h, 0, adj.m.rows)
            }
            PoolKind::Mean => {
                op_cache.push(None);
                tape.spmm_const(&ctx.mean_mat[d].to_real::<T>(), h)
            }
            PoolKind::Max => {
                op_cache.push(None);
                tape.row_group_max(&adj.m, adj.m.rows, h)
            }
        };
        let post_mean = tape.mean_rows(pooled);
        mean_pairs.push((pre_mean, post_mean));
        h = pooled;
    }

    Ok(EncoderOutput { code: h, details, mean_pairs, op_cache })
}

/// Run the decoder from the code back to max_level: unpool (reusing the
/// cached operators, zero detail; zero-padding where the encoder used a
/// baseline), then the feature block of that level.
pub fn decoder_forward<T: Real>(
    tape: &mut Tape<T>,
    code: Var,
    op_cache: &[Option<CachedOps>],
    ctx: &ModelContext,
    params: &ModelParams,
    bound: &BoundParams,
) -> Result<Var> {
    let cfg = &ctx.cfg;
    if op_cache.len() != cfg.depth() {
        return Err(CoreError::InvalidConfig(format!(
            "operator cache has {} entries, expected {}",
            op_cache.len(),
            cfg.depth()
        )));
    }
    let mut h = code;
    for d in (0..cfg.depth()).rev() {
        let adj = &ctx.adjacency[d];
        h = match op_cache[d] {
            Some(ops) => {
                if ops.level != adj.level {
                    return Err(CoreError::InvalidConfig(format!(
                        "cache entry {d} is for level {}, expected {}",
                        ops.level, adj.level
                    )));
                }
                record_lift_unpool(tape, h, adj, ops.u_vals, ops.p_vals)
            }
            None => {
                let zeros = tape.input(Mat::zeros(adj.m.cols, tape.value(h).cols));
                tape.concat_rows(h, zeros)
            }
        };
        h = conv_forward(tape, h, &params.decoder[d], &ctx.agg[d], bound.decoder[d]);
    }
    Ok(h)
}

/// Encoder, global node-mean, affine head. Returns (logits, encoder output).
pub fn classify_forward<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    ctx: &ModelContext,
    params: &ModelParams,
    bound: &BoundParams,
) -> Result<(Var, EncoderOutput)> {
    let enc = encoder_forward(tape, x, ctx, params, bound)?;
    let (w, b) = bound
        .head
        .ok_or_else(|| CoreError::InvalidConfig("classification needs a head".into()))?;
    let pooled = tape.mean_rows(enc.code);
    let projected = tape.matmul(pooled, w);
    let logits = tape.add_row_broadcast(projected, b);
    Ok((logits, enc))
}

/// Ground truth for one sample.
pub enum Target<'a, T: Real> {
    /// Dense target signal (reconstruction).
    Recon(&'a Mat<T>),
    /// Class index (classification).
    Class(usize),
}

/// Scalar loss nodes: the total that is differentiated plus its components
/// for reporting. `detail_raw` and `mean_raw` are the unweighted sums of
/// norms; total = task + lambda * detail_raw + gamma * mean_raw.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub task: Var,
    pub detail_raw: Var,
    pub mean_raw: Var,
}

/// Assemble the training loss on the tape: the task term (MSE or
/// cross-entropy), plus lambda times the summed Frobenius norms of the
/// detail coefficients, plus gamma times the summed Euclidean norms of the
/// per-channel mean differences.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    task_out: Var,
    target: Target<'_, T>,
    details: &[Var],
    mean_pairs: &[(Var, Var)],
    lambda: f64,
    gamma: f64,
) -> Result<LossParts> {
    let task = match target {
        Target::Recon(t) => {
            let out = tape.value(task_out);
            if (out.rows, out.cols) != (t.rows, t.cols) {
                return Err(CoreError::ShapeMismatch(format!(
                    "reconstruction is {}x{}, target {}x{}",
                    out.rows, out.cols, t.rows, t.cols
                )));
            }
            let numel = (t.rows * t.cols) as f64;
            let tv = tape.input(t.clone());
            let diff = tape.sub(task_out, tv);
            let ss = tape.sum_sq(diff);
            tape.scalar_mul(ss, 1.0 / numel)
        }
        Target::Class(c) => {
            if c >= tape.value(task_out).cols {
                return Err(CoreError::BadData(format!("class {c} out of range")));
            }
            let lp = tape.log_softmax_rows(task_out);
            tape.nll_pick(lp, vec![c])
        }
    };

    let mut detail_raw = tape.input(Mat::scalar(T::zero()));
    for &d in details {
        let n = tape.frobenius_norm(d);
        detail_raw = tape.add(detail_raw, n);
    }
    let mut mean_raw = tape.input(Mat::scalar(T::zero()));
    for &(pre, post) in mean_pairs {
        let diff = tape.sub(pre, post);
        let n = tape.frobenius_norm(diff);
        mean_raw = tape.add(mean_raw, n);
    }

    let weighted_detail = tape.scalar_mul(detail_raw, lambda);
    let weighted_mean = tape.scalar_mul(mean_raw, gamma);
    let partial = tape.add(task, weighted_detail);
    let total = tape.add(partial, weighted_mean);
    if !tape.value(total).is_finite() {
        return Err(CoreError::NonFinite("loss".into()));
    }
    Ok(LossParts { total, task, detail_raw, mean_raw })
}
