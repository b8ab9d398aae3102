//! The `check` subcommand: the full property battery against a mesh file,
//! printed as a pass/fail table. Includes a deliberately broken operator to
//! prove the vanishing-moment check can actually fail.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use spherelift_core::attention::AttentionParams;
use spherelift_core::autodiff::Tape;
use spherelift_core::icosphere::{node_count, split_adjacency, validate_hierarchy, IcosphereHierarchy};
use spherelift_core::lifting::{
    handcrafted_operators, lift_backward, lift_forward, lift_unpool, LiftingOperators,
    SphericalSignal,
};
use spherelift_core::mat::Mat;
use spherelift_core::model::{
    bind_params, classify_forward, collect_grads, decoder_forward, encoder_forward, total_loss,
    ModelContext, ModelParams, NetworkConfig, PoolKind, Target, TaskKind,
};
use spherelift_core::attention::compute_operators;

use crate::commands::artifacts::load_mesh_file;
use crate::error::{CliError, CliResult};
use crate::events::Logger;
use crate::manifest::Manifest;

struct Row {
    name: String,
    pass: bool,
    detail: String,
}

fn row(name: impl Into<String>, result: Result<String, String>) -> Row {
    match result {
        Ok(detail) => Row { name: name.into(), pass: true, detail },
        Err(detail) => Row { name: name.into(), pass: false, detail },
    }
}

fn random_signal(level: usize, channels: usize, seed: u64) -> SphericalSignal<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = Mat::from_fn(node_count(level), channels, |_, _| rng.gen_range(-5.0..5.0));
    SphericalSignal::new(level, values).expect("valid signal")
}

fn attention_ops(
    h: &IcosphereHierarchy,
    level: usize,
    channels: usize,
    seed: u64,
) -> CliResult<LiftingOperators<f64>> {
    let adj = split_adjacency(h, level)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = AttentionParams::random(level, channels, 6, 0.2, false, 1.5, &mut rng);
    let features = random_signal(level, channels, seed ^ 0x5eed);
    Ok(compute_operators(&features, &adj, &params)?)
}

fn invertibility(h: &IcosphereHierarchy, levels: &[usize]) -> Result<String, String> {
    let mut worst = 0.0f64;
    for &level in levels {
        let x = random_signal(level, 4, 0x11 + level as u64);
        let adj = split_adjacency(h, level).map_err(|e| e.to_string())?;
        let hand = handcrafted_operators::<f64>(&adj).map_err(|e| e.to_string())?;
        let attn = attention_ops(h, level, 4, 0x22 + level as u64).map_err(|e| format!("{e:?}"))?;
        for ops in [&hand, &attn] {
            let sub = lift_forward(&x, ops).map_err(|e| e.to_string())?;
            let back = lift_backward(&sub, ops).map_err(|e| e.to_string())?;
            let rel = back.values.sub(&x.values).max_abs() / x.values.max_abs();
            worst = worst.max(rel);
        }
    }
    if worst <= 1e-10 {
        Ok(format!("max relative error {worst:.2e}"))
    } else {
        Err(format!("max relative error {worst:.2e} > 1e-10"))
    }
}

fn vanishing_moment(h: &IcosphereHierarchy, levels: &[usize]) -> Result<String, String> {
    let mut worst = 0.0f64;
    for &level in levels {
        let c = SphericalSignal::new(level, Mat::filled(node_count(level), 2, 1.0)).unwrap();
        let adj = split_adjacency(h, level).map_err(|e| e.to_string())?;
        let hand = handcrafted_operators::<f64>(&adj).map_err(|e| e.to_string())?;
        let attn = attention_ops(h, level, 2, 0x33 + level as u64).map_err(|e| format!("{e:?}"))?;
        for ops in [&hand, &attn] {
            let sub = lift_forward(&c, ops).map_err(|e| e.to_string())?;
            worst = worst.max(sub.d.max_abs());
        }
    }
    if worst <= 1e-9 {
        Ok(format!("max |D| {worst:.2e} on constants"))
    } else {
        Err(format!("max |D| {worst:.2e} > 1e-9 on constants"))
    }
}

/// Scale one predict row to sum 1.1/2 and confirm the vanishing-moment
/// check would catch it: a constant must leave a visibly nonzero detail.
fn broken_operator_detector(h: &IcosphereHierarchy) -> Result<String, String> {
    let level = 1;
    let adj = split_adjacency(h, level).map_err(|e| e.to_string())?;
    let mut ops = handcrafted_operators::<f64>(&adj).map_err(|e| e.to_string())?;
    for v in ops.p_hat.values.iter_mut().take(adj.n.row_degree(0)) {
        *v *= 1.1;
    }
    let c = SphericalSignal::new(level, Mat::filled(node_count(level), 1, 1.0)).unwrap();
    let sub = lift_forward(&c, &ops).map_err(|e| e.to_string())?;
    let hit = sub.d.max_abs();
    if hit > 1e-3 {
        Ok(format!("perturbed row sum 1.1 flagged with |D| = {hit:.3}"))
    } else {
        Err(format!("perturbed operators left |D| = {hit:.2e}; detector is blind"))
    }
}

fn perfect_recovery(h: &IcosphereHierarchy, levels: &[usize]) -> Result<String, String> {
    let mut worst = 0.0f64;
    for &level in levels {
        let c = random_signal(level - 1, 3, 0x44 + level as u64);
        let adj = split_adjacency(h, level).map_err(|e| e.to_string())?;
        let ops = handcrafted_operators::<f64>(&adj).map_err(|e| e.to_string())?;
        let up = lift_unpool(&c, &ops).map_err(|e| e.to_string())?;
        let sub = lift_forward(&up, &ops).map_err(|e| e.to_string())?;
        worst = worst.max(sub.c.sub(&c.values).max_abs()).max(sub.d.max_abs());
    }
    if worst <= 1e-10 {
        Ok(format!("max recovery error {worst:.2e}"))
    } else {
        Err(format!("max recovery error {worst:.2e} > 1e-10"))
    }
}

fn locality(h: &IcosphereHierarchy, level: usize) -> Result<String, String> {
    let adj = split_adjacency(h, level).map_err(|e| e.to_string())?;
    let ops = handcrafted_operators::<f64>(&adj).map_err(|e| e.to_string())?;
    let lists = h.neighbor_lists(level);
    let n = node_count(level);
    let mut rng = ChaCha8Rng::seed_from_u64(0x55);
    for _ in 0..25 {
        let node = rng.gen_range(0..n);
        let mut values = Mat::zeros(n, 1);
        *values.at_mut(node, 0) = 1.0;
        let x = SphericalSignal::new(level, values).unwrap();
        let sub = lift_forward(&x, &ops).map_err(|e| e.to_string())?;

        let mut dist = vec![usize::MAX; n];
        dist[node] = 0;
        let mut frontier = vec![node];
        for d in 1..=2 {
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in &lists[u] {
                    if dist[v as usize] == usize::MAX {
                        dist[v as usize] = d;
                        next.push(v as usize);
                    }
                }
            }
            frontier = next;
        }
        for i in 0..sub.c.rows {
            if sub.c.at(i, 0) != 0.0 && i != node && dist[i] > 2 {
                return Err(format!("impulse at {node} reached C[{i}] beyond two hops"));
            }
        }
        for j in 0..sub.d.rows {
            if sub.d.at(j, 0) != 0.0 && dist[adj.m.rows + j] > 2 {
                return Err(format!("impulse at {node} reached D[{j}] beyond two hops"));
            }
        }
    }
    Ok(format!("25 impulses at level {level} stayed within two hops"))
}

fn gradient_check(h: &IcosphereHierarchy, task: TaskKind, seed: u64) -> Result<f64, String> {
    let cfg = NetworkConfig {
        attention_dim: 3,
        ..NetworkConfig::uniform(1, 0, vec![2, 3], PoolKind::LiftAdaptive, task)
    };
    let ctx = ModelContext::new(h, cfg.clone()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(&cfg, &mut rng).map_err(|e| e.to_string())?;
    params.for_each_param_mut(&mut |m| {
        for v in &mut m.data {
            *v += rng.gen_range(-0.25..0.25);
        }
    });
    let input = Mat::from_fn(node_count(1), 2, |_, _| rng.gen_range(0.2..1.0));
    let target_mat;
    let target = match cfg.task {
        TaskKind::Reconstruction => {
            target_mat = Mat::from_fn(node_count(1), 2, |_, _| rng.gen_range(0.0..1.0));
            Target::Recon(&target_mat)
        }
        TaskKind::Classification { .. } => Target::Class(1),
    };

    let loss_at = |p: &ModelParams| -> Result<f64, String> {
        let mut tape = Tape::<f64>::new();
        let bound = bind_params(&mut tape, p);
        let x = tape.input(input.clone());
        let parts = match target {
            Target::Recon(t) => {
                let enc =
                    encoder_forward(&mut tape, x, &ctx, p, &bound).map_err(|e| e.to_string())?;
                let out = decoder_forward(&mut tape, enc.code, &enc.op_cache, &ctx, p, &bound)
                    .map_err(|e| e.to_string())?;
                total_loss(&mut tape, out, Target::Recon(t), &enc.details, &enc.mean_pairs, 0.1, 0.01)
                    .map_err(|e| e.to_string())?
            }
            Target::Class(c) => {
                let (logits, enc) =
                    classify_forward(&mut tape, x, &ctx, p, &bound).map_err(|e| e.to_string())?;
                total_loss(&mut tape, logits, Target::Class(c), &enc.details, &enc.mean_pairs, 0.1, 0.01)
                    .map_err(|e| e.to_string())?
            }
        };
        Ok(tape.value(parts.total).at(0, 0))
    };

    let analytic: Vec<f64> = {
        let mut tape = Tape::<f64>::new();
        let bound = bind_params(&mut tape, &params);
        let x = tape.input(input.clone());
        let parts = match target {
            Target::Recon(t) => {
                let enc = encoder_forward(&mut tape, x, &ctx, &params, &bound)
                    .map_err(|e| e.to_string())?;
                let out =
                    decoder_forward(&mut tape, enc.code, &enc.op_cache, &ctx, &params, &bound)
                        .map_err(|e| e.to_string())?;
                total_loss(&mut tape, out, Target::Recon(t), &enc.details, &enc.mean_pairs, 0.1, 0.01)
                    .map_err(|e| e.to_string())?
            }
            Target::Class(c) => {
                let (logits, enc) = classify_forward(&mut tape, x, &ctx, &params, &bound)
                    .map_err(|e| e.to_string())?;
                total_loss(&mut tape, logits, Target::Class(c), &enc.details, &enc.mean_pairs, 0.1, 0.01)
                    .map_err(|e| e.to_string())?
            }
        };
        let grads = tape.backward(parts.total).map_err(|e| e.to_string())?;
        collect_grads(&tape, &bound, &grads)
            .iter()
            .flat_map(|m| m.data.iter().copied())
            .collect()
    };

    let mut flat = Vec::new();
    params.for_each_param(&mut |m| flat.extend_from_slice(&m.data));
    let mut max_err = 0.0f64;
    for i in 0..flat.len() {
        let orig = flat[i];
        let step = 1e-5 * orig.abs().max(1.0);
        let mut probe = |v: f64| -> Result<f64, String> {
            flat[i] = v;
            let mut at = 0;
            let fl = &flat;
            params.for_each_param_mut(&mut |m| {
                let len = m.data.len();
                m.data.copy_from_slice(&fl[at..at + len]);
                at += len;
            });
            loss_at(&params)
        };
        let up = probe(orig + step)?;
        let down = probe(orig - step)?;
        probe(orig)?;
        let fd = (up - down) / (2.0 * step);
        let denom = analytic[i].abs().max(fd.abs()).max(1e-4);
        max_err = max_err.max((analytic[i] - fd).abs() / denom);
    }
    Ok(max_err)
}

fn gradients(h: &IcosphereHierarchy) -> Result<String, String> {
    let recon = gradient_check(h, TaskKind::Reconstruction, 0x66)?;
    let class = gradient_check(h, TaskKind::Classification { classes: 3 }, 0x67)?;
    let worst = recon.max(class);
    if worst <= 1e-4 {
        Ok(format!("finite differences agree to {worst:.2e}"))
    } else {
        Err(format!("finite-difference mismatch {worst:.2e} > 1e-4"))
    }
}

pub fn check(mesh_path: &Path, max_level: Option<usize>, log: &Logger) -> CliResult<()> {
    let h = load_mesh_file(mesh_path)?;
    if h.max_level() == 0 {
        return Err(CliError::Data("mesh has no liftable levels (max level 0)".into()));
    }
    let top = max_level.unwrap_or(3).min(h.max_level()).max(1);
    let levels: Vec<usize> = (1..=top).collect();

    let report = validate_hierarchy(&h);
    let mesh_row = if report.all_pass() {
        Ok(format!("{} invariants", report.checks.len()))
    } else {
        let first = report.checks.iter().find(|c| !c.pass).unwrap();
        Err(format!("{}: {}", first.name, first.detail))
    };

    let row_sums = levels
        .iter()
        .try_for_each(|&l| {
            let adj = split_adjacency(&h, l).map_err(|e| e.to_string())?;
            handcrafted_operators::<f64>(&adj)
                .and_then(|ops| ops.validate())
                .map_err(|e| e.to_string())
        })
        .map(|_| format!("levels {}..={} valid", levels[0], top));

    let rows = vec![
        row("mesh invariants", mesh_row),
        row("operator row sums", row_sums),
        row("invertibility", invertibility(&h, &levels)),
        row("vanishing moment", vanishing_moment(&h, &levels)),
        row("vanishing-moment detector", broken_operator_detector(&h)),
        row("perfect recovery", perfect_recovery(&h, &levels)),
        row("two-hop locality", locality(&h, top.min(2))),
        row("gradient check", gradients(&h)),
    ];

    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    println!("{:width$}  result  detail", "property");
    for r in &rows {
        println!("{:width$}  {}  {}", r.name, if r.pass { "PASS  " } else { "FAIL  " }, r.detail);
        log.event(
            "check",
            json!({"property": r.name, "pass": r.pass, "detail": r.detail}),
        );
    }
    let params = json!({"mesh": mesh_path.display().to_string(), "max_level": top}).to_string();
    Manifest::new("check", 0, &params).write_for_file(mesh_path)?;

    match rows.iter().find(|r| !r.pass) {
        None => {
            println!("all {} properties pass", rows.len());
            Ok(())
        }
        Some(first) => Err(CliError::Property(format!("{}: {}", first.name, first.detail))),
    }
}
