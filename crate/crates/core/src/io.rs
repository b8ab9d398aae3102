//! Binary container formats: meshes (`SLMESH01`), signal batches
//! (`SLSIG001`), and checkpoints (`SLCKPT01`).
//!
//! Every container is an 8-byte magic, a little-endian u32 header length, a
//! JSON header, and a raw little-endian payload. The JSON half carries
//! shapes and configuration; the payload carries the numbers. Mesh files
//! store node coordinates and per-level edge lists only — parent maps are
//! rebuilt from the sorted edge order on load, so a file cannot smuggle in
//! an inconsistent lifting structure.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::icosphere::{node_count, IcosphereHierarchy};
use crate::mat::Mat;
use crate::model::{ModelParams, NetworkConfig};
use crate::trainer::Checkpoint;

pub const MESH_MAGIC: &[u8; 8] = b"SLMESH01";
pub const SIGNAL_MAGIC: &[u8; 8] = b"SLSIG001";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SLCKPT01";

fn write_container(
    path: &Path,
    magic: &[u8; 8],
    header: &impl Serialize,
    payload: &[u8],
) -> Result<()> {
    let header_bytes = serde_json::to_vec(header)
        .map_err(|e| CoreError::BadData(format!("header serialization failed: {e}")))?;
    let len = u32::try_from(header_bytes.len())
        .map_err(|_| CoreError::BadData("header exceeds u32 length".into()))?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(magic)?;
    f.write_all(&len.to_le_bytes())?;
    f.write_all(&header_bytes)?;
    f.write_all(payload)?;
    f.flush()?;
    Ok(())
}

fn read_container<H: DeserializeOwned>(path: &Path, magic: &[u8; 8]) -> Result<(H, Vec<u8>)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut got_magic = [0u8; 8];
    f.read_exact(&mut got_magic)
        .map_err(|_| CoreError::BadData(format!("{}: too short for a magic", path.display())))?;
    if &got_magic != magic {
        return Err(CoreError::BadData(format!(
            "{}: magic {:?} is not {}",
            path.display(),
            String::from_utf8_lossy(&got_magic),
            String::from_utf8_lossy(magic),
        )));
    }
    let mut len_bytes = [0u8; 4];
    f.read_exact(&mut len_bytes)
        .map_err(|_| CoreError::BadData(format!("{}: truncated header length", path.display())))?;
    let len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; len];
    f.read_exact(&mut header_bytes)
        .map_err(|_| CoreError::BadData(format!("{}: truncated header", path.display())))?;
    let header = serde_json::from_slice(&header_bytes)
        .map_err(|e| CoreError::BadData(format!("{}: bad header: {e}", path.display())))?;
    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;
    Ok((header, payload))
}

fn f64s_to_bytes(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn bytes_to_f64s(bytes: &[u8], expected: usize, what: &str) -> Result<Vec<f64>> {
    if bytes.len() != expected * 8 {
        return Err(CoreError::BadData(format!(
            "{what}: payload is {} bytes, expected {}",
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

fn bytes_to_u32s(bytes: &[u8], what: &str) -> Result<Vec<u32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(CoreError::BadData(format!("{what}: length not a multiple of 4")));
    }
    Ok(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk"))).collect())
}

#[derive(Serialize, Deserialize)]
struct MeshHeader {
    max_level: usize,
    node_count: usize,
    /// Edge pair count per level, 0..=max_level.
    edge_counts: Vec<usize>,
}

/// Write the hierarchy: finest-level coordinates, then each level's edge
/// list, all little-endian.
pub fn save_mesh(path: impl AsRef<Path>, h: &IcosphereHierarchy) -> Result<()> {
    let finest = h.coords(h.max_level());
    let header = MeshHeader {
        max_level: h.max_level(),
        node_count: finest.len(),
        edge_counts: (0..=h.max_level()).map(|l| h.edges(l).len()).collect(),
    };
    let mut payload = Vec::with_capacity(finest.len() * 24);
    f64s_to_bytes(&mut payload, finest.iter().flat_map(|p| p.iter().copied()));
    for l in 0..=h.max_level() {
        for &(a, b) in h.edges(l) {
            payload.extend_from_slice(&a.to_le_bytes());
            payload.extend_from_slice(&b.to_le_bytes());
        }
    }
    write_container(path.as_ref(), MESH_MAGIC, &header, &payload)
}

/// Read a mesh container back into a hierarchy, rebuilding parent maps from
/// the per-level edge order.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<IcosphereHierarchy> {
    let path = path.as_ref();
    let (header, payload): (MeshHeader, _) = read_container(path, MESH_MAGIC)?;
    if header.node_count != node_count(header.max_level) {
        return Err(CoreError::BadData(format!(
            "mesh header: {} nodes does not fit level {}",
            header.node_count, header.max_level
        )));
    }
    if header.edge_counts.len() != header.max_level + 1 {
        return Err(CoreError::BadData("mesh header: one edge count per level required".into()));
    }
    let coord_bytes = header.node_count * 24;
    let edge_pairs: usize = header.edge_counts.iter().sum();
    if payload.len() != coord_bytes + edge_pairs * 8 {
        return Err(CoreError::BadData(format!(
            "mesh payload is {} bytes, expected {}",
            payload.len(),
            coord_bytes + edge_pairs * 8
        )));
    }
    let flat = bytes_to_f64s(&payload[..coord_bytes], header.node_count * 3, "mesh coordinates")?;
    let finest: Vec<[f64; 3]> = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    // Coordinates of level l are the first node_count(l) entries.
    let coords: Vec<Vec<[f64; 3]>> =
        (0..=header.max_level).map(|l| finest[..node_count(l)].to_vec()).collect();
    let raw = bytes_to_u32s(&payload[coord_bytes..], "mesh edges")?;
    let mut edges = Vec::with_capacity(header.max_level + 1);
    let mut at = 0;
    for &count in &header.edge_counts {
        let mut level_edges = Vec::with_capacity(count);
        for _ in 0..count {
            level_edges.push((raw[at], raw[at + 1]));
            at += 2;
        }
        edges.push(level_edges);
    }
    IcosphereHierarchy::from_parts(coords, edges)
}

#[derive(Serialize, Deserialize)]
struct SignalHeader {
    level: usize,
    channels: usize,
    count: usize,
    /// Free-form provenance (e.g. the generating spec).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

/// Write a batch of same-shape signals at one level.
pub fn save_signals(
    path: impl AsRef<Path>,
    level: usize,
    signals: &[Mat<f64>],
    meta: Option<serde_json::Value>,
) -> Result<()> {
    let first = signals
        .first()
        .ok_or_else(|| CoreError::BadData("cannot write an empty signal batch".into()))?;
    let n = node_count(level);
    let header = SignalHeader { level, channels: first.cols, count: signals.len(), meta };
    let mut payload = Vec::with_capacity(signals.len() * n * first.cols * 8);
    for (i, s) in signals.iter().enumerate() {
        if s.rows != n || s.cols != first.cols {
            return Err(CoreError::BadData(format!(
                "signal {i} is {}x{}, batch is {n}x{}",
                s.rows, s.cols, first.cols
            )));
        }
        f64s_to_bytes(&mut payload, s.data.iter().copied());
    }
    write_container(path.as_ref(), SIGNAL_MAGIC, &header, &payload)
}

/// Read a signal batch; returns the level and the node × channel matrices.
pub fn load_signals(path: impl AsRef<Path>) -> Result<(usize, Vec<Mat<f64>>)> {
    let path = path.as_ref();
    let (header, payload): (SignalHeader, _) = read_container(path, SIGNAL_MAGIC)?;
    let n = node_count(header.level);
    let per = n * header.channels;
    let flat = bytes_to_f64s(&payload, per * header.count, "signal batch")?;
    let signals = flat
        .chunks_exact(per)
        .map(|c| Mat::from_vec(n, header.channels, c.to_vec()))
        .collect();
    Ok((header.level, signals))
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    net: NetworkConfig,
    /// Shapes of every parameter matrix in visitor order, as a cross-check
    /// against the configuration-derived layout.
    shapes: Vec<(usize, usize)>,
}

/// Write a checkpoint: the network configuration plus every parameter
/// matrix, flattened in visitor order. Only fully trainable parameter sets
/// round-trip; pass-through blocks have no serialized form.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    ckpt.params.validate_for(&ckpt.net)?;
    let mut shapes = Vec::new();
    let mut payload = Vec::new();
    ckpt.params.for_each_param(&mut |m| {
        shapes.push((m.rows, m.cols));
        f64s_to_bytes(&mut payload, m.data.iter().copied());
    });
    let header = CheckpointHeader { net: ckpt.net.clone(), shapes };
    write_container(path.as_ref(), CHECKPOINT_MAGIC, &header, &payload)
}

/// Read a checkpoint and rebuild the parameter structure the configuration
/// dictates.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let (header, payload): (CheckpointHeader, _) = read_container(path, CHECKPOINT_MAGIC)?;
    header.net.validate()?;
    // Materialize the layout from the config, then overwrite every matrix.
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let mut params = ModelParams::init(&header.net, &mut rng)?;
    let mut expected = Vec::new();
    params.for_each_param(&mut |m| expected.push((m.rows, m.cols)));
    if expected != header.shapes {
        return Err(CoreError::CheckpointMismatch(format!(
            "stored shapes {:?} differ from the configuration's {:?}",
            header.shapes, expected
        )));
    }
    let total: usize = expected.iter().map(|(r, c)| r * c).sum();
    let flat = bytes_to_f64s(&payload, total, "checkpoint parameters")?;
    let mut at = 0;
    params.for_each_param_mut(&mut |m| {
        let len = m.data.len();
        m.data.copy_from_slice(&flat[at..at + len]);
        at += len;
    });
    if !flat.iter().all(|v| v.is_finite()) {
        return Err(CoreError::NonFinite("checkpoint parameters".into()));
    }
    let ckpt = Checkpoint { net: header.net, params };
    ckpt.params.validate_for(&ckpt.net)?;
    Ok(ckpt)
}
