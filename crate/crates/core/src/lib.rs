//! Lifting-based adaptive spherical wavelets on icosahedral geodesic grids.
//!
//! The crate builds subdivision hierarchies of the unit sphere, splits each
//! level's graph into even/odd partitions, and runs update-first lifting
//! transforms over the cross-partition blocks. Lifting operators are either
//! handcrafted (uniform, row-sum normalized) or computed from node features
//! with masked graph attention, which makes the resulting wavelets adaptive
//! while keeping invertibility, two-hop locality, and the first-order
//! vanishing moment intact.
//!
//! On top of the transforms sit pooling/unpooling operations, a small
//! tape-based reverse-mode autodiff engine, hierarchical encoder-decoder
//! and classifier networks, and a trainer with an adaptive-moment optimizer,
//! so the attention-parameterized wavelets can be fit end to end.
//!
//! Module map:
//! - [`icosphere`]: icosahedron subdivision, per-level graphs, block adjacency.
//! - [`lifting`]: forward/backward lifting, handcrafted operators, pool/unpool.
//! - [`attention`]: masked graph-attention operator computation.
//! - [`autodiff`]: the tape engine and its primitive set.
//! - [`model`]: graph-conv blocks, encoder/decoder/classifier, the loss.
//! - [`signals`]: synthetic spherical signals, image projection, IDX ingestion.
//! - [`trainer`]: optimization loops, metrics, pooling comparisons.
//! - [`io`]: binary container formats for meshes, signals, and checkpoints.

pub mod attention;
pub mod autodiff;
pub mod error;
pub mod icosphere;
pub mod io;
pub mod lifting;
pub mod mat;
pub mod model;
pub mod real;
pub mod signals;
pub mod sparse;
pub mod trainer;

pub use error::{CoreError, Result};
pub use mat::Mat;
pub use model::{ModelContext, ModelParams, NetworkConfig, PoolKind, TaskKind};
pub use real::Real;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
