//! Artifact-producing subcommands: mesh construction, synthetic signal
//! generation, image projection, and the standalone lifting transform.

use std::path::{Path, PathBuf};

use serde_json::json;
use spherelift_core::icosphere::{build_hierarchy, node_count, split_adjacency, IcosphereHierarchy};
use spherelift_core::io::{load_mesh, load_signals, save_mesh, save_signals};
use spherelift_core::lifting::{
    handcrafted_operators, lift_backward, lift_forward, SphericalSignal, SubbandPair,
};
use spherelift_core::mat::Mat;
use spherelift_core::signals::{
    generate, load_idx, project_image, IdxData, Projection, SignalKind, SyntheticSpec,
};

use crate::error::{CliError, CliResult};
use crate::events::Logger;
use crate::manifest::Manifest;

pub fn load_mesh_file(path: &Path) -> CliResult<IcosphereHierarchy> {
    Ok(load_mesh(path)?)
}

pub fn mesh(max_level: usize, out: &Path, log: &Logger) -> CliResult<()> {
    let h = build_hierarchy(max_level)?;
    save_mesh(out, &h)?;
    let params = json!({"max_level": max_level}).to_string();
    Manifest::new("mesh", 0, &params).write_for_file(out)?;
    log.event(
        "mesh_written",
        json!({"max_level": max_level, "nodes": node_count(max_level), "path": out.display().to_string()}),
    );
    println!(
        "mesh: {} levels, {} nodes at the finest → {}",
        max_level + 1,
        node_count(max_level),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn gen(
    mesh_path: &Path,
    kind: SignalKind,
    level: usize,
    channels: usize,
    band: usize,
    amplitude: f64,
    count: usize,
    seed: u64,
    out: &Path,
    log: &Logger,
) -> CliResult<()> {
    if count == 0 {
        return Err(CliError::Config("--count must be at least 1".into()));
    }
    let h = load_mesh_file(mesh_path)?;
    let signals: Vec<Mat<f64>> = (0..count)
        .map(|i| {
            let spec = SyntheticSpec {
                kind,
                level,
                channels,
                band_limit: band,
                amplitude,
                seed: seed.wrapping_add(i as u64),
            };
            generate(&spec, &h).map(|s| s.values)
        })
        .collect::<Result<_, _>>()?;
    let meta = json!({
        "kind": kind,
        "band_limit": band,
        "amplitude": amplitude,
        "seed": seed,
    });
    save_signals(out, level, &signals, Some(meta.clone()))?;
    let params =
        json!({"mesh": mesh_path.display().to_string(), "level": level, "channels": channels,
               "count": count, "spec": meta})
        .to_string();
    Manifest::new("gen", seed, &params).write_for_file(out)?;
    log.event(
        "signals_written",
        json!({"count": count, "level": level, "channels": channels, "path": out.display().to_string()}),
    );
    println!("gen: {count} signals at level {level} → {}", out.display());
    Ok(())
}

pub fn project(
    mesh_path: &Path,
    images_path: &Path,
    level: usize,
    limit: Option<usize>,
    out: &Path,
    log: &Logger,
) -> CliResult<()> {
    let h = load_mesh_file(mesh_path)?;
    let images = match load_idx(images_path)? {
        IdxData::Images(v) => v,
        IdxData::Labels(_) => {
            return Err(CliError::Data(format!(
                "{} holds labels, not images",
                images_path.display()
            )))
        }
    };
    let take = limit.unwrap_or(images.len()).min(images.len());
    if take == 0 {
        return Err(CliError::Data("no images to project".into()));
    }
    let signals: Vec<Mat<f64>> = images[..take]
        .iter()
        .map(|img| project_image(img, &h, level, Projection::Gnomonic).map(|s| s.values))
        .collect::<Result<_, _>>()?;
    let meta = json!({
        "source": images_path.display().to_string(),
        "projection": "gnomonic",
    });
    save_signals(out, level, &signals, Some(meta))?;
    let params = json!({
        "mesh": mesh_path.display().to_string(),
        "images": images_path.display().to_string(),
        "level": level,
        "count": take,
    })
    .to_string();
    Manifest::new("project", 0, &params).write_for_file(out)?;
    log.event(
        "signals_written",
        json!({"count": take, "level": level, "path": out.display().to_string()}),
    );
    println!("project: {take} images onto level {level} → {}", out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Direction {
    Forward,
    Backward,
}

/// Forward analysis writes the sub-bands stacked as `[C; D]` (which has
/// exactly the fine level's node count); backward synthesis reads such a
/// file and reconstructs the fine signal.
pub fn transform(
    mesh_path: &Path,
    signals_path: &Path,
    direction: Direction,
    out: &PathBuf,
    log: &Logger,
) -> CliResult<()> {
    let h = load_mesh_file(mesh_path)?;
    let (level, inputs) = load_signals(signals_path)?;
    if level == 0 {
        return Err(CliError::Data("level-0 signals have no coarser level to lift to".into()));
    }
    if level > h.max_level() {
        return Err(CliError::Data(format!(
            "signals live at level {level}, mesh stops at {}",
            h.max_level()
        )));
    }
    let adj = split_adjacency(&h, level)?;
    let ops = handcrafted_operators::<f64>(&adj)?;
    let n_coarse = node_count(level - 1);

    let outputs: Vec<Mat<f64>> = match direction {
        Direction::Forward => inputs
            .iter()
            .map(|m| {
                let x = SphericalSignal::new(level, m.clone())?;
                let sub = lift_forward(&x, &ops)?;
                Ok(stack_rows(&sub.c, &sub.d))
            })
            .collect::<CliResult<_>>()?,
        Direction::Backward => inputs
            .iter()
            .map(|m| {
                let (c, d) = split_rows(m, n_coarse);
                let sub = SubbandPair { c, d };
                Ok(lift_backward(&sub, &ops)?.values)
            })
            .collect::<CliResult<_>>()?,
    };
    let meta = match direction {
        Direction::Forward => Some(json!({"content": "subbands", "coarse_rows": n_coarse})),
        Direction::Backward => None,
    };
    save_signals(out, level, &outputs, meta)?;
    let params = json!({
        "mesh": mesh_path.display().to_string(),
        "signals": signals_path.display().to_string(),
        "direction": format!("{direction:?}").to_lowercase(),
        "level": level,
    })
    .to_string();
    Manifest::new("transform", 0, &params).write_for_file(out)?;
    log.event(
        "transform_done",
        json!({"direction": format!("{direction:?}").to_lowercase(), "count": outputs.len(),
               "level": level, "path": out.display().to_string()}),
    );
    println!(
        "transform {}: {} signals at level {level} → {}",
        match direction {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        },
        outputs.len(),
        out.display()
    );
    Ok(())
}

fn stack_rows(c: &Mat<f64>, d: &Mat<f64>) -> Mat<f64> {
    let mut data = Vec::with_capacity((c.rows + d.rows) * c.cols);
    data.extend_from_slice(&c.data);
    data.extend_from_slice(&d.data);
    Mat::from_vec(c.rows + d.rows, c.cols, data)
}

fn split_rows(m: &Mat<f64>, top: usize) -> (Mat<f64>, Mat<f64>) {
    let c = Mat::from_vec(top, m.cols, m.data[..top * m.cols].to_vec());
    let d = Mat::from_vec(m.rows - top, m.cols, m.data[top * m.cols..].to_vec());
    (c, d)
}
