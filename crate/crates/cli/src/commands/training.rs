//! `train`, `eval`, and `compare`: the optimization-side subcommands. All
//! three read a JSON run config; flags override individual fields.

use std::fs;
use std::path::Path;

use serde_json::json;
use spherelift_core::model::{ModelContext, PoolKind, TaskKind};
use spherelift_core::signals::{load_idx, IdxData};
use spherelift_core::trainer::{compare_poolings, evaluate, train, Dataset, MetricsReport};
use spherelift_core::io::{load_checkpoint, load_signals, save_checkpoint};

use crate::commands::artifacts::load_mesh_file;
use crate::config::{RunConfig, TrainOverrides};
use crate::error::{CliError, CliResult};
use crate::events::Logger;
use crate::manifest::Manifest;

/// Load the signals file named by `field`, insisting its level matches the
/// network's finest level.
fn load_inputs(
    path: Option<&Path>,
    field: &str,
    expect_level: usize,
) -> CliResult<Vec<spherelift_core::mat::Mat<f64>>> {
    let path =
        path.ok_or_else(|| CliError::Config(format!("config is missing `{field}`")))?;
    let (level, mats) = load_signals(path)?;
    if level != expect_level {
        return Err(CliError::Data(format!(
            "{field} holds level-{level} signals but the network expects level {expect_level}"
        )));
    }
    if mats.is_empty() {
        return Err(CliError::Data(format!("{field} is empty")));
    }
    Ok(mats)
}

fn load_labels(path: Option<&Path>, field: &str, count: usize) -> CliResult<Vec<usize>> {
    let path = path.ok_or_else(|| {
        CliError::Config(format!("classification task needs `{field}` in the config"))
    })?;
    let labels = match load_idx(path)? {
        IdxData::Labels(l) => l,
        IdxData::Images(_) => {
            return Err(CliError::Data(format!("{field} contains images, not labels")))
        }
    };
    if labels.len() != count {
        return Err(CliError::Data(format!(
            "{field} has {} labels for {count} signals",
            labels.len()
        )));
    }
    Ok(labels.into_iter().map(usize::from).collect())
}

/// Assemble the dataset a config describes, reconstruction or classification.
fn build_dataset(
    cfg: &RunConfig,
    signals: Option<&Path>,
    labels: Option<&Path>,
    field: &str,
    label_field: &str,
) -> CliResult<Dataset> {
    let inputs = load_inputs(signals, field, cfg.network.max_level)?;
    match cfg.network.task {
        TaskKind::Reconstruction => Ok(Dataset::reconstruction(inputs)),
        TaskKind::Classification { classes } => {
            let labels = load_labels(labels, label_field, inputs.len())?;
            if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
                return Err(CliError::Data(format!(
                    "label {bad} out of range for {classes} classes"
                )));
            }
            Ok(Dataset::classification(inputs, labels))
        }
    }
}

fn summary_json(report: &MetricsReport, seed: u64) -> String {
    serde_json::to_string_pretty(&json!({
        "metric_name": report.metric_name,
        "final_metric": report.final_metric,
        "epochs": report.epochs.len(),
        "seed": seed,
    }))
    .expect("summary serializes")
}

pub fn train_cmd(
    config_path: &Path,
    overrides: &TrainOverrides,
    out_dir: &Path,
    log: &Logger,
) -> CliResult<()> {
    let mut rc = crate::config::load(config_path)?;
    overrides.apply(&mut rc.train)?;
    let h = load_mesh_file(&rc.mesh)?;
    if h.max_level() < rc.network.max_level {
        return Err(CliError::Data(format!(
            "mesh stops at level {} but the network starts at level {}",
            h.max_level(),
            rc.network.max_level
        )));
    }

    let data = build_dataset(
        &rc,
        rc.train_signals.as_deref(),
        rc.train_labels.as_deref(),
        "train_signals",
        "train_labels",
    )?;
    let ctx = ModelContext::new(&h, rc.network.clone())?;
    log.event(
        "train_start",
        json!({"samples": data.len(), "epochs": rc.train.epochs, "seed": rc.train.seed}),
    );
    let (ckpt, report) = train(&rc.train, &rc.network, &ctx, &data)?;
    for e in &report.epochs {
        log.event(
            "epoch",
            json!({
                "epoch": e.epoch,
                "task_loss": e.task_loss,
                "detail_term": e.detail_term,
                "mean_term": e.mean_term,
                "total_loss": e.total_loss,
                "val_loss": e.val_loss,
            }),
        );
    }

    fs::create_dir_all(out_dir)?;
    let effective = serde_json::to_string_pretty(&rc).expect("config serializes");
    fs::write(out_dir.join("metrics.csv"), report.metrics_csv())?;
    fs::write(out_dir.join("summary.json"), summary_json(&report, rc.train.seed))?;
    fs::write(out_dir.join("config.json"), &effective)?;
    save_checkpoint(out_dir.join("checkpoint.bin"), &ckpt)?;
    Manifest::new("train", rc.train.seed, &effective).write_in_dir(out_dir)?;
    log.event(
        "train_done",
        json!({"final_metric": report.final_metric, "metric_name": report.metric_name}),
    );
    println!(
        "trained {} epochs; best validation {} {:.6}; artifacts in {}",
        report.epochs.len(),
        report.metric_name,
        report.final_metric,
        out_dir.display()
    );
    Ok(())
}

pub fn eval_cmd(
    config_path: &Path,
    checkpoint_path: &Path,
    out_dir: Option<&Path>,
    log: &Logger,
) -> CliResult<()> {
    let rc = crate::config::load(config_path)?;
    let h = load_mesh_file(&rc.mesh)?;
    let ckpt = load_checkpoint(checkpoint_path)?;
    if h.max_level() < ckpt.net.max_level {
        return Err(CliError::Data(format!(
            "mesh stops at level {} but the checkpoint starts at level {}",
            h.max_level(),
            ckpt.net.max_level
        )));
    }
    // Scoring data must match the checkpoint's architecture, not whatever
    // network the config happens to describe.
    let mut eval_rc = rc.clone();
    eval_rc.network = ckpt.net.clone();
    let data = build_dataset(
        &eval_rc,
        rc.eval_signals.as_deref(),
        rc.eval_labels.as_deref(),
        "eval_signals",
        "eval_labels",
    )?;
    let ctx = ModelContext::new(&h, ckpt.net.clone())?;
    let report = evaluate(&ckpt, &ctx, &data)?;
    log.event(
        "eval_done",
        json!({"final_metric": report.final_metric, "metric_name": report.metric_name, "samples": data.len()}),
    );
    println!(
        "{}",
        json!({"metric_name": report.metric_name, "final_metric": report.final_metric})
    );
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("summary.json"), summary_json(&report, rc.train.seed))?;
        let effective = serde_json::to_string_pretty(&rc).expect("config serializes");
        Manifest::new("eval", rc.train.seed, &effective).write_in_dir(dir)?;
    }
    Ok(())
}

pub fn compare_cmd(
    config_path: &Path,
    kinds_flag: &[String],
    overrides: &TrainOverrides,
    out_file: &Path,
    log: &Logger,
) -> CliResult<()> {
    let mut rc = crate::config::load(config_path)?;
    overrides.apply(&mut rc.train)?;
    let names = if kinds_flag.is_empty() { rc.kinds.clone() } else { kinds_flag.to_vec() };
    if names.is_empty() {
        return Err(CliError::Config(
            "no pooling kinds: set `kinds` in the config or pass --kinds".into(),
        ));
    }
    let kinds = names
        .iter()
        .map(|n| PoolKind::parse(n).map_err(|e| CliError::Config(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    let seeds =
        if rc.seeds.is_empty() { vec![rc.train.seed] } else { rc.seeds.clone() };

    let h = load_mesh_file(&rc.mesh)?;
    let train_data = build_dataset(
        &rc,
        rc.train_signals.as_deref(),
        rc.train_labels.as_deref(),
        "train_signals",
        "train_labels",
    )?;
    let test_data = build_dataset(
        &rc,
        rc.eval_signals.as_deref(),
        rc.eval_labels.as_deref(),
        "eval_signals",
        "eval_labels",
    )?;
    log.event(
        "compare_start",
        json!({"kinds": names, "seeds": seeds, "epochs": rc.train.epochs}),
    );
    let table = compare_poolings(&rc.network, &kinds, &h, &train_data, &test_data, &rc.train, &seeds)?;
    for row in &table.rows {
        log.event(
            "compare_row",
            json!({
                "kind": row.kind.name(),
                "seed": row.seed,
                "val_loss": row.val_loss,
                "test_metric": row.test_metric,
            }),
        );
    }

    if let Some(parent) = out_file.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(out_file, table.to_csv())?;
    let effective = serde_json::to_string_pretty(&rc).expect("config serializes");
    Manifest::new("compare", rc.train.seed, &effective).write_for_file(out_file)?;

    print!("{}", table.to_csv());
    for &kind in &kinds {
        if let Some(m) = table.median_metric(kind) {
            println!("median {} {}: {}", table.metric_name, kind.name(), m);
        }
    }
    Ok(())
}
