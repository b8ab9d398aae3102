//! Optimization loops, metric reports, and the pooling-comparison harness.
//!
//! Training is per-sample tape construction with gradients averaged over the
//! batch in index order, an adaptive-moment optimizer over the flat parameter
//! list, a 10% validation holdout, and best-checkpoint selection. Everything
//! downstream of the seed is deterministic, which is what makes the
//! comparison harness meaningful: two runs with the same configuration yield
//! byte-identical metric tables.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{CoreError, Result};
use crate::icosphere::{node_count, IcosphereHierarchy};
use crate::mat::Mat;
use crate::model::{
    bind_params, classify_forward, collect_grads, decoder_forward, encoder_forward, total_loss,
    BoundParams, LossParts, ModelContext, ModelParams, NetworkConfig, PoolKind, Target, TaskKind,
};
use crate::real::Real;

/// Compute dtype for the forward/backward passes. Parameters are kept and
/// updated in f64 either way; the flag selects the tape's arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

/// Optimization settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub gamma: f64,
    /// Weight of the task term in the objective; 0 trains on the
    /// regularizers alone.
    pub task_weight: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            step_size: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 10,
            batch_size: 16,
            lambda: 0.1,
            gamma: 0.01,
            task_weight: 1.0,
            seed: 0,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(CoreError::InvalidConfig(format!("step size {} must be > 0", self.step_size)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(CoreError::InvalidConfig(format!("{name} {b} must be in [0, 1)")));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(CoreError::InvalidConfig("epsilon must be > 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CoreError::InvalidConfig("epochs and batch size must be >= 1".into()));
        }
        if self.lambda < 0.0 || self.gamma < 0.0 || self.task_weight < 0.0 {
            return Err(CoreError::InvalidConfig("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Losses of one epoch, averaged over training samples. `detail_term` and
/// `mean_term` are the raw (unweighted) regularizer values, so
/// `total = task + λ·detail + γ·mean` holds exactly as reported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub task_loss: f64,
    pub detail_term: f64,
    pub mean_term: f64,
    pub total_loss: f64,
    /// Validation monitor: mean task loss on the holdout, or the full
    /// objective when the task weight is zero.
    pub val_loss: f64,
    /// Seconds spent in this epoch. Never written to the metrics CSV, which
    /// must be byte-identical across reruns.
    pub wall_clock_sec: f64,
}

/// Per-epoch losses plus the final headline metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub epochs: Vec<EpochMetrics>,
    pub final_metric: f64,
    /// "mse" or "accuracy".
    pub metric_name: String,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let mut last = None;
        for e in &self.epochs {
            let all = [e.task_loss, e.detail_term, e.mean_term, e.total_loss, e.val_loss];
            if all.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::NonFinite(format!("metrics of epoch {}", e.epoch)));
            }
            if let Some(prev) = last {
                if e.epoch <= prev {
                    return Err(CoreError::BadData(format!(
                        "epoch indices not increasing: {} after {prev}",
                        e.epoch
                    )));
                }
            }
            last = Some(e.epoch);
        }
        if !self.final_metric.is_finite() {
            return Err(CoreError::NonFinite("final metric".into()));
        }
        Ok(())
    }

    /// Deterministic per-epoch CSV. Deliberately excludes wall-clock so the
    /// file is byte-stable across reruns of the same seed.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch,task_loss,detail_term,mean_term,total_loss,val_loss\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch, e.task_loss, e.detail_term, e.mean_term, e.total_loss, e.val_loss
            ));
        }
        out
    }
}

/// Trained state: the architecture and its parameters.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: NetworkConfig,
    pub params: ModelParams,
}

/// One supervised target.
#[derive(Debug, Clone)]
pub enum TargetData {
    Recon(Mat<f64>),
    Class(usize),
}

/// In-memory dataset of spherical inputs at the network's finest level.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub inputs: Vec<Mat<f64>>,
    pub targets: Vec<TargetData>,
}

impl Dataset {
    /// Reconstruction task: each signal is its own target.
    pub fn reconstruction(inputs: Vec<Mat<f64>>) -> Self {
        let targets = inputs.iter().map(|m| TargetData::Recon(m.clone())).collect();
        Dataset { inputs, targets }
    }

    pub fn classification(inputs: Vec<Mat<f64>>, labels: Vec<usize>) -> Self {
        let targets = labels.into_iter().map(TargetData::Class).collect();
        Dataset { inputs, targets }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn validate(&self, net: &NetworkConfig) -> Result<()> {
        if self.is_empty() {
            return Err(CoreError::BadData("empty dataset".into()));
        }
        if self.inputs.len() != self.targets.len() {
            return Err(CoreError::BadData(format!(
                "{} inputs vs {} targets",
                self.inputs.len(),
                self.targets.len()
            )));
        }
        let n = node_count(net.max_level);
        for (i, x) in self.inputs.iter().enumerate() {
            if x.rows != n || x.cols != net.channels[0] {
                return Err(CoreError::BadData(format!(
                    "sample {i} is {}x{}, expected {n}x{}",
                    x.rows, x.cols, net.channels[0]
                )));
            }
            match (&self.targets[i], &net.task) {
                (TargetData::Recon(t), TaskKind::Reconstruction) => {
                    if t.rows != n || t.cols != net.channels[0] {
                        return Err(CoreError::BadData(format!("target {i} shape mismatch")));
                    }
                }
                (TargetData::Class(c), TaskKind::Classification { classes }) => {
                    if c >= classes {
                        return Err(CoreError::BadData(format!("label {c} out of {classes} classes")));
                    }
                }
                _ => return Err(CoreError::BadData(format!("target {i} does not fit the task"))),
            }
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer over the flat parameter list.
struct Adam {
    m: Vec<Mat<f64>>,
    v: Vec<Mat<f64>>,
    t: usize,
}

impl Adam {
    fn new(params: &ModelParams) -> Self {
        let mut m = Vec::new();
        params.for_each_param(&mut |p| m.push(Mat::zeros(p.rows, p.cols)));
        let v = m.clone();
        Adam { m, v, t: 0 }
    }

    fn step(&mut self, cfg: &TrainConfig, params: &mut ModelParams, grads: &[Mat<f64>]) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let mut idx = 0;
        params.for_each_param_mut(&mut |p| {
            let g = &grads[idx];
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for k in 0..p.data.len() {
                let gk = g.data[k];
                m.data[k] = cfg.beta1 * m.data[k] + (1.0 - cfg.beta1) * gk;
                v.data[k] = cfg.beta2 * v.data[k] + (1.0 - cfg.beta2) * gk * gk;
                let m_hat = m.data[k] / bc1;
                let v_hat = v.data[k] / bc2;
                p.data[k] -= cfg.step_size * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
            idx += 1;
        });
    }
}

/// Scalar loss readings of one sample.
struct SampleLoss {
    task: f64,
    detail: f64,
    mean: f64,
    total: f64,
}

/// Record one sample end to end and return the loss parts; gradients come
/// from backward on `parts.total`.
fn record_sample<T: Real>(
    tape: &mut Tape<T>,
    ctx: &ModelContext,
    params: &ModelParams,
    bound: &BoundParams,
    cfg: &TrainConfig,
    input: &Mat<f64>,
    target: &TargetData,
) -> Result<LossParts> {
    let x = tape.input(input.to_real::<T>());
    let parts = match (&ctx.cfg.task, target) {
        (TaskKind::Reconstruction, TargetData::Recon(t)) => {
            let enc = encoder_forward(tape, x, ctx, params, bound)?;
            let out = decoder_forward(tape, enc.code, &enc.op_cache, ctx, params, bound)?;
            let t = t.to_real::<T>();
            total_loss(tape, out, Target::Recon(&t), &enc.details, &enc.mean_pairs, cfg.lambda, cfg.gamma)?
        }
        (TaskKind::Classification { .. }, TargetData::Class(c)) => {
            let (logits, enc) = classify_forward(tape, x, ctx, params, bound)?;
            total_loss(tape, logits, Target::Class(*c), &enc.details, &enc.mean_pairs, cfg.lambda, cfg.gamma)?
        }
        _ => return Err(CoreError::BadData("target does not fit the task".into())),
    };
    if cfg.task_weight == 1.0 {
        return Ok(parts);
    }
    // Reweigh the task term; the regularizer weights stay as assembled.
    let wt = tape.scalar_mul(parts.task, cfg.task_weight);
    let wd = tape.scalar_mul(parts.detail_raw, cfg.lambda);
    let wm = tape.scalar_mul(parts.mean_raw, cfg.gamma);
    let partial = tape.add(wt, wd);
    let total = tape.add(partial, wm);
    Ok(LossParts { total, task: wt, detail_raw: parts.detail_raw, mean_raw: parts.mean_raw })
}

fn read_loss<T: Real>(tape: &Tape<T>, parts: &LossParts) -> SampleLoss {
    SampleLoss {
        task: tape.value(parts.task).at(0, 0).into_f64(),
        detail: tape.value(parts.detail_raw).at(0, 0).into_f64(),
        mean: tape.value(parts.mean_raw).at(0, 0).into_f64(),
        total: tape.value(parts.total).at(0, 0).into_f64(),
    }
}

/// Validation monitor over a set of samples, no gradients: mean task loss,
/// or the mean objective when nothing weights the task term.
fn validation_monitor<T: Real>(
    ctx: &ModelContext,
    params: &ModelParams,
    cfg: &TrainConfig,
    data: &Dataset,
    indices: &[usize],
) -> Result<f64> {
    let mut sum = 0.0;
    for &i in indices {
        let mut tape = Tape::<T>::new();
        let bound = bind_params(&mut tape, params);
        let parts = record_sample(&mut tape, ctx, params, &bound, cfg, &data.inputs[i], &data.targets[i])?;
        let l = read_loss(&tape, &parts);
        sum += if cfg.task_weight == 0.0 { l.total } else { l.task };
    }
    Ok(sum / indices.len() as f64)
}

/// Mean gradient over a batch, in visitor order, plus the accumulated loss
/// readings.
fn batch_gradients<T: Real>(
    ctx: &ModelContext,
    params: &ModelParams,
    cfg: &TrainConfig,
    data: &Dataset,
    batch: &[usize],
    epoch: usize,
) -> Result<(Vec<Mat<f64>>, SampleLoss)> {
    let mut acc: Option<Vec<Mat<f64>>> = None;
    let mut losses = SampleLoss { task: 0.0, detail: 0.0, mean: 0.0, total: 0.0 };
    for &i in batch {
        let mut tape = Tape::<T>::new();
        let bound = bind_params(&mut tape, params);
        let parts = record_sample(&mut tape, ctx, params, &bound, cfg, &data.inputs[i], &data.targets[i])
            .map_err(|e| match e {
                CoreError::NonFinite(_) => CoreError::Divergence { epoch },
                other => other,
            })?;
        let l = read_loss(&tape, &parts);
        if !l.total.is_finite() {
            return Err(CoreError::Divergence { epoch });
        }
        losses.task += l.task;
        losses.detail += l.detail;
        losses.mean += l.mean;
        losses.total += l.total;
        let grads = tape.backward(parts.total)?;
        let sample_grads = collect_grads(&tape, &bound, &grads);
        match &mut acc {
            None => acc = Some(sample_grads),
            Some(a) => {
                for (dst, src) in a.iter_mut().zip(&sample_grads) {
                    for (d, s) in dst.data.iter_mut().zip(&src.data) {
                        *d += s;
                    }
                }
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = acc.expect("nonempty batch");
    for g in &mut grads {
        for v in &mut g.data {
            *v *= scale;
        }
    }
    losses.task *= scale;
    losses.detail *= scale;
    losses.mean *= scale;
    losses.total *= scale;
    Ok((grads, losses))
}

fn train_generic<T: Real>(
    cfg: &TrainConfig,
    net: &NetworkConfig,
    ctx: &ModelContext,
    data: &Dataset,
) -> Result<(Checkpoint, MetricsReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(net, &mut rng)?;

    // 10% validation holdout (at least the whole set when too small to split).
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let val_count = n / 10;
    let (train_idx, val_idx): (Vec<usize>, Vec<usize>) = if val_count == 0 {
        (order.clone(), order.clone())
    } else {
        let (t, v) = order.split_at(n - val_count);
        (t.to_vec(), v.to_vec())
    };

    let mut adam = Adam::new(&params);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ModelParams)> = None;

    let mut shuffled = train_idx.clone();
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        shuffled.shuffle(&mut rng);
        let mut sums = SampleLoss { task: 0.0, detail: 0.0, mean: 0.0, total: 0.0 };
        let mut batches = 0.0;
        for batch in shuffled.chunks(cfg.batch_size) {
            let (grads, losses) = batch_gradients::<T>(ctx, &params, cfg, data, batch, epoch)?;
            adam.step(cfg, &mut params, &grads);
            sums.task += losses.task;
            sums.detail += losses.detail;
            sums.mean += losses.mean;
            sums.total += losses.total;
            batches += 1.0;
        }
        let val_loss =
            validation_monitor::<T>(ctx, &params, cfg, data, &val_idx).map_err(|e| match e {
                CoreError::NonFinite(_) => CoreError::Divergence { epoch },
                other => other,
            })?;
        if !val_loss.is_finite() {
            return Err(CoreError::Divergence { epoch });
        }
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, params.clone()));
        }
        epochs.push(EpochMetrics {
            epoch,
            task_loss: sums.task / batches,
            detail_term: sums.detail / batches,
            mean_term: sums.mean / batches,
            total_loss: sums.total / batches,
            val_loss,
            wall_clock_sec: started.elapsed().as_secs_f64(),
        });
    }

    let (final_metric, best_params) = best.expect("at least one epoch");
    let report = MetricsReport {
        epochs,
        final_metric,
        metric_name: match net.task {
            TaskKind::Reconstruction => "mse".into(),
            TaskKind::Classification { .. } => "val_ce".into(),
        },
    };
    report.validate()?;
    Ok((Checkpoint { net: net.clone(), params: best_params }, report))
}

/// Fit a fresh model. Deterministic in `cfg.seed`; returns the
/// best-validation checkpoint (when the task weight is zero the monitored
/// quantity is the full objective instead, since the task term is then not
/// being optimized).
pub fn train(
    cfg: &TrainConfig,
    net: &NetworkConfig,
    ctx: &ModelContext,
    data: &Dataset,
) -> Result<(Checkpoint, MetricsReport)> {
    cfg.validate()?;
    net.validate()?;
    if ctx.cfg != *net {
        return Err(CoreError::InvalidConfig("context was built for a different network".into()));
    }
    data.validate(net)?;
    match cfg.precision {
        Precision::F64 => train_generic::<f64>(cfg, net, ctx, data),
        Precision::F32 => train_generic::<f32>(cfg, net, ctx, data),
    }
}

/// Metrics of a checkpoint on a dataset: mean squared error for
/// reconstruction, accuracy for classification. Parameters are not touched.
pub fn evaluate(ckpt: &Checkpoint, ctx: &ModelContext, data: &Dataset) -> Result<MetricsReport> {
    if ctx.cfg != ckpt.net {
        return Err(CoreError::CheckpointMismatch(
            "checkpoint network differs from the evaluation context".into(),
        ));
    }
    ckpt.params.validate_for(&ckpt.net)?;
    data.validate(&ckpt.net)?;
    let mut sum = 0.0;
    let mut hits = 0usize;
    for i in 0..data.len() {
        let mut tape = Tape::<f64>::new();
        let bound = bind_params(&mut tape, &ckpt.params);
        let x = tape.input(data.inputs[i].clone());
        match (&ckpt.net.task, &data.targets[i]) {
            (TaskKind::Reconstruction, TargetData::Recon(t)) => {
                let enc = encoder_forward(&mut tape, x, ctx, &ckpt.params, &bound)?;
                let out = decoder_forward(&mut tape, enc.code, &enc.op_cache, ctx, &ckpt.params, &bound)?;
                let diff = tape.value(out).sub(t);
                sum += diff.sum_sq() / (t.rows * t.cols) as f64;
            }
            (TaskKind::Classification { .. }, TargetData::Class(c)) => {
                let (logits, _) = classify_forward(&mut tape, x, ctx, &ckpt.params, &bound)?;
                let row = tape.value(logits).row(0);
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| a.partial_cmp(b).expect("finite logits"))
                    .map(|(k, _)| k)
                    .expect("nonempty logits");
                if pred == *c {
                    hits += 1;
                }
            }
            _ => return Err(CoreError::BadData("target does not fit the task".into())),
        }
    }
    let (final_metric, metric_name) = match ckpt.net.task {
        TaskKind::Reconstruction => (sum / data.len() as f64, "mse".to_string()),
        TaskKind::Classification { .. } => (hits as f64 / data.len() as f64, "accuracy".to_string()),
    };
    let report = MetricsReport { epochs: Vec::new(), final_metric, metric_name };
    report.validate()?;
    Ok(report)
}

/// Mean detail energy (summed squared Frobenius norms of all detail bands)
/// of a parameter set over a dataset.
pub fn detail_energy(
    params: &ModelParams,
    ctx: &ModelContext,
    data: &Dataset,
) -> Result<f64> {
    let mut sum = 0.0;
    for input in &data.inputs {
        let mut tape = Tape::<f64>::new();
        let bound = bind_params(&mut tape, params);
        let x = tape.input(input.clone());
        let enc = encoder_forward(&mut tape, x, ctx, params, &bound)?;
        for &d in &enc.details {
            sum += tape.value(d).sum_sq();
        }
    }
    Ok(sum / data.len() as f64)
}

/// One line of the pooling comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub kind: PoolKind,
    pub seed: u64,
    pub val_loss: f64,
    pub test_metric: f64,
}

/// Results of `compare_poolings`, one row per (kind, seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareTable {
    pub rows: Vec<CompareRow>,
    /// Name of the test metric column ("mse" or "accuracy").
    pub metric_name: String,
}

impl CompareTable {
    /// Deterministic CSV; no timestamps or timings.
    pub fn to_csv(&self) -> String {
        let mut out = format!("kind,seed,val_loss,test_{}\n", self.metric_name);
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.kind.name(), r.seed, r.val_loss, r.test_metric));
        }
        out
    }

    /// Median test metric of one kind across seeds.
    pub fn median_metric(&self, kind: PoolKind) -> Option<f64> {
        let mut vals: Vec<f64> =
            self.rows.iter().filter(|r| r.kind == kind).map(|r| r.test_metric).collect();
        if vals.is_empty() {
            return None;
        }
        vals.sort_by(|a, b| a.partial_cmp(b).expect("finite metrics"));
        let n = vals.len();
        Some(if n % 2 == 1 { vals[n / 2] } else { (vals[n / 2 - 1] + vals[n / 2]) / 2.0 })
    }
}

/// Train one model per pooling kind and seed on identical data with an
/// identical backbone, then score each on the test set.
pub fn compare_poolings(
    net_base: &NetworkConfig,
    kinds: &[PoolKind],
    h: &IcosphereHierarchy,
    train_data: &Dataset,
    test_data: &Dataset,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<CompareTable> {
    if kinds.is_empty() || seeds.is_empty() {
        return Err(CoreError::InvalidConfig("need at least one pooling kind and seed".into()));
    }
    let mut rows = Vec::with_capacity(kinds.len() * seeds.len());
    let mut metric_name = String::new();
    for &kind in kinds {
        let mut net = net_base.clone();
        net.pooling = vec![kind; net.depth()];
        let ctx = ModelContext::new(h, net.clone())?;
        for &seed in seeds {
            let run_cfg = TrainConfig { seed, ..cfg.clone() };
            let (ckpt, report) = train(&run_cfg, &net, &ctx, train_data)?;
            let eval = evaluate(&ckpt, &ctx, test_data)?;
            metric_name = eval.metric_name.clone();
            rows.push(CompareRow {
                kind,
                seed,
                val_loss: report.final_metric,
                test_metric: eval.final_metric,
            });
        }
    }
    Ok(CompareTable { rows, metric_name })
}
