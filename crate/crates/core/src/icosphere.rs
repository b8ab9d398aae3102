//! Icosahedron-based subdivision hierarchies of the unit sphere.
//!
//! Level 0 is the regular icosahedron (12 nodes, 30 edges, 20 faces). Each
//! level splits every face into four by inserting normalized edge midpoints,
//! so a level-l subdivision has `10 * 4^l + 2` nodes. Nodes inherited from
//! the coarser level keep their indices (the even partition); the inserted
//! midpoints follow (the odd partition), ordered by their parent edge
//! `(min index, max index)` so indexing is identical across runs and
//! platforms.

use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::sparse::CsrPattern;

/// Upper bound on subdivision depth; level 8 is ~655k nodes.
pub const MAX_SUPPORTED_LEVEL: usize = 8;

/// Number of nodes of a level-l subdivision: `10 * 4^l + 2`.
pub fn node_count(level: usize) -> usize {
    10 * 4usize.pow(level as u32) + 2
}

/// Number of odd (newly inserted) nodes at level l >= 1: `30 * 4^(l-1)`,
/// which equals the edge count of the level-(l-1) mesh.
pub fn odd_count(level: usize) -> usize {
    assert!(level >= 1);
    30 * 4usize.pow(level as u32 - 1)
}

/// The subdivision hierarchy: per-level coordinates, edge lists, and the
/// parent-edge map that ties each odd node to its two even endpoints.
#[derive(Debug, Clone)]
pub struct IcosphereHierarchy {
    max_level: usize,
    /// coords[l][i]: unit 3-vector of node i at level l.
    coords: Vec<Vec<[f64; 3]>>,
    /// edges[l]: undirected (min, max) pairs, lexicographically sorted.
    edges: Vec<Vec<(u32, u32)>>,
    /// parent_edge[l][k]: the two level-(l-1) endpoints of odd node
    /// `node_count(l-1) + k`. Entry 0 is empty.
    parent_edge: Vec<Vec<(u32, u32)>>,
}

impl IcosphereHierarchy {
    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn coords(&self, level: usize) -> &[[f64; 3]] {
        &self.coords[level]
    }

    pub fn edges(&self, level: usize) -> &[(u32, u32)] {
        &self.edges[level]
    }

    /// Parent endpoints (at level-1 indices) of each odd node, in odd order.
    pub fn parents(&self, level: usize) -> &[(u32, u32)] {
        &self.parent_edge[level]
    }

    /// Neighbor lists of the level graph, each list sorted ascending.
    pub fn neighbor_lists(&self, level: usize) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); node_count(level)];
        for &(a, b) in &self.edges[level] {
            adj[a as usize].push(b);
            adj[b as usize].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Assemble a hierarchy from per-level coordinates and edge lists, e.g.
    /// when loading a mesh container. Parent maps are re-derived from the
    /// odd-node ordering convention: odd node k at level l is the midpoint of
    /// the k-th level-(l-1) edge in (min, max) order.
    pub fn from_parts(coords: Vec<Vec<[f64; 3]>>, edges: Vec<Vec<(u32, u32)>>) -> Result<Self> {
        if coords.is_empty() || coords.len() != edges.len() {
            return Err(CoreError::BadData("mesh levels inconsistent".into()));
        }
        let max_level = coords.len() - 1;
        let mut parent_edge = vec![Vec::new()];
        for l in 1..=max_level {
            let mut parents = edges[l - 1].clone();
            parents.sort_unstable();
            if node_count(l - 1) + parents.len() != coords[l].len() {
                return Err(CoreError::BadData(format!(
                    "level {l} node count does not match parent edge count"
                )));
            }
            parent_edge.push(parents);
        }
        Ok(IcosphereHierarchy { max_level, coords, edges, parent_edge })
    }
}

/// The four 0/1 blocks of a level adjacency matrix under the even/odd split:
///
/// ```text
///   A_l = [ E  M ]
///         [ N  O ]
/// ```
///
/// E connects even to even, O odd to odd, and M/N cross the partitions with
/// `N = M^T`. Odd-block column/row indices are local (0-based within the odd
/// partition). For the inherent subdivision graph E is always empty: a
/// level-l edge joins a coarse node only to edge midpoints, never to another
/// coarse node. E stays in the model because alternative graph constructions
/// may populate it.
#[derive(Debug, Clone)]
pub struct BlockAdjacency {
    pub level: usize,
    pub e: Arc<CsrPattern>,
    pub m: Arc<CsrPattern>,
    pub n: Arc<CsrPattern>,
    pub o: Arc<CsrPattern>,
}

impl BlockAdjacency {
    pub fn n_even(&self) -> usize {
        self.m.rows
    }

    pub fn n_odd(&self) -> usize {
        self.m.cols
    }
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Great-circle distance between two unit vectors.
pub fn geodesic_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0).acos()
}

/// The golden-ratio icosahedron: vertices (+-1, +-phi, 0) and cyclic
/// permutations, normalized to the unit sphere.
fn base_icosahedron() -> (Vec<[f64; 3]>, Vec<[u32; 3]>) {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let verts: Vec<[f64; 3]> = vec![
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .into_iter()
    .map(normalize)
    .collect();
    let faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (verts, faces)
}

fn edges_of_faces(faces: &[[u32; 3]]) -> Vec<(u32, u32)> {
    let mut edges: Vec<(u32, u32)> = Vec::with_capacity(faces.len() * 3);
    for f in faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            edges.push((a.min(b), a.max(b)));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Build the hierarchy up to `max_level`. Deterministic: the base orientation
/// is fixed and odd nodes are ordered by their parent edge (min, max).
pub fn build_hierarchy(max_level: usize) -> Result<IcosphereHierarchy> {
    if max_level > MAX_SUPPORTED_LEVEL {
        return Err(CoreError::LevelOutOfRange {
            level: max_level,
            reason: format!("max_level must be <= {MAX_SUPPORTED_LEVEL}"),
        });
    }
    let (verts0, faces0) = base_icosahedron();
    let mut coords = vec![verts0];
    let mut edges = vec![edges_of_faces(&faces0)];
    let mut parent_edge = vec![Vec::new()];
    let mut faces = faces0;

    for l in 1..=max_level {
        let prev_edges = edges[l - 1].clone();
        let n_prev = coords[l - 1].len() as u32;

        // Midpoint of the k-th sorted parent edge becomes odd node n_prev + k.
        let mut verts = coords[l - 1].clone();
        for &(a, b) in &prev_edges {
            let pa = coords[l - 1][a as usize];
            let pb = coords[l - 1][b as usize];
            verts.push(normalize([(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0, (pa[2] + pb[2]) / 2.0]));
        }
        let mid = |a: u32, b: u32| -> u32 {
            let key = (a.min(b), a.max(b));
            n_prev + prev_edges.binary_search(&key).expect("face edge missing from edge list") as u32
        };

        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        for &[v0, v1, v2] in &faces {
            let m01 = mid(v0, v1);
            let m12 = mid(v1, v2);
            let m02 = mid(v0, v2);
            new_faces.push([v0, m01, m02]);
            new_faces.push([v1, m12, m01]);
            new_faces.push([v2, m02, m12]);
            new_faces.push([m01, m12, m02]);
        }

        edges.push(edges_of_faces(&new_faces));
        coords.push(verts);
        parent_edge.push(prev_edges);
        faces = new_faces;
    }

    Ok(IcosphereHierarchy { max_level, coords, edges, parent_edge })
}

/// Reorganize the level-l adjacency into its even/odd blocks.
pub fn split_adjacency(h: &IcosphereHierarchy, level: usize) -> Result<BlockAdjacency> {
    if level < 1 || level > h.max_level() {
        return Err(CoreError::LevelOutOfRange {
            level,
            reason: format!("split level must be in 1..={}", h.max_level()),
        });
    }
    let n_even = node_count(level - 1) as u32;
    let n_odd = (node_count(level) - node_count(level - 1)) as u32;
    let mut e_pairs = Vec::new();
    let mut m_pairs = Vec::new();
    let mut n_pairs = Vec::new();
    let mut o_pairs = Vec::new();
    for &(a, b) in h.edges(level) {
        match (a < n_even, b < n_even) {
            (true, true) => {
                e_pairs.push((a, b));
                e_pairs.push((b, a));
            }
            (true, false) => {
                m_pairs.push((a, b - n_even));
                n_pairs.push((b - n_even, a));
            }
            (false, true) => {
                m_pairs.push((b, a - n_even));
                n_pairs.push((a - n_even, b));
            }
            (false, false) => {
                o_pairs.push((a - n_even, b - n_even));
                o_pairs.push((b - n_even, a - n_even));
            }
        }
    }
    Ok(BlockAdjacency {
        level,
        e: Arc::new(CsrPattern::from_pairs(n_even as usize, n_even as usize, &e_pairs)),
        m: Arc::new(CsrPattern::from_pairs(n_even as usize, n_odd as usize, &m_pairs)),
        n: Arc::new(CsrPattern::from_pairs(n_odd as usize, n_even as usize, &n_pairs)),
        o: Arc::new(CsrPattern::from_pairs(n_odd as usize, n_odd as usize, &o_pairs)),
    })
}

/// One line of a validation report.
#[derive(Debug, Clone)]
pub struct InvariantCheck {
    pub name: String,
    pub pass: bool,
    /// First offending index / counterexample when the check fails.
    pub detail: String,
}

/// Per-invariant pass/fail report.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<InvariantCheck>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn check(name: &str, failure: Option<String>) -> InvariantCheck {
    InvariantCheck {
        name: name.to_string(),
        pass: failure.is_none(),
        detail: failure.unwrap_or_else(|| "ok".to_string()),
    }
}

/// Run every structural invariant against a hierarchy, reporting the first
/// offending index per check.
pub fn validate_hierarchy(h: &IcosphereHierarchy) -> ValidationReport {
    let mut checks = Vec::new();

    let mut count_fail = None;
    for l in 0..=h.max_level() {
        if h.coords(l).len() != node_count(l) {
            count_fail = Some(format!("level {l}: {} nodes, expected {}", h.coords(l).len(), node_count(l)));
            break;
        }
    }
    checks.push(check("node_count_10_4l_2", count_fail));

    let mut norm_fail = None;
    'norms: for l in 0..=h.max_level() {
        for (i, &c) in h.coords(l).iter().enumerate() {
            let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
            if (n - 1.0).abs() > 1e-12 {
                norm_fail = Some(format!("level {l} node {i}: norm {n}"));
                break 'norms;
            }
        }
    }
    checks.push(check("unit_norm", norm_fail));

    let mut degree_fail = None;
    for l in 0..=h.max_level() {
        let adj = h.neighbor_lists(l);
        let mut five = 0usize;
        let mut bad = None;
        for (i, list) in adj.iter().enumerate() {
            match list.len() {
                5 => five += 1,
                6 => {}
                d => {
                    bad = Some(format!("level {l} node {i}: degree {d}"));
                    break;
                }
            }
        }
        if let Some(b) = bad {
            degree_fail = Some(b);
            break;
        }
        if five != 12 {
            degree_fail = Some(format!("level {l}: {five} degree-5 nodes, expected 12"));
            break;
        }
    }
    checks.push(check("degrees_5_or_6_with_12_pentagons", degree_fail));

    let mut parent_fail = None;
    'parents: for l in 1..=h.max_level() {
        let n_even = node_count(l - 1) as u32;
        let adj = h.neighbor_lists(l);
        for (k, &(pa, pb)) in h.parents(l).iter().enumerate() {
            let odd = n_even as usize + k;
            let evens: Vec<u32> = adj[odd].iter().copied().filter(|&x| x < n_even).collect();
            if evens != vec![pa.min(pb), pa.max(pb)] {
                parent_fail = Some(format!("level {l} odd node {odd}: even neighbors {evens:?} != parents ({pa},{pb})"));
                break 'parents;
            }
        }
    }
    checks.push(check("odd_nodes_have_their_two_parents", parent_fail));

    let mut geo_fail = None;
    'geo: for l in 1..=h.max_level() {
        let n_even = node_count(l - 1);
        for (k, &(pa, pb)) in h.parents(l).iter().enumerate() {
            let m = h.coords(l)[n_even + k];
            let da = geodesic_distance(m, h.coords(l - 1)[pa as usize]);
            let db = geodesic_distance(m, h.coords(l - 1)[pb as usize]);
            if (da - db).abs() > 1e-9 {
                geo_fail = Some(format!("level {l} odd node {}: |{da} - {db}|", n_even + k));
                break 'geo;
            }
        }
    }
    checks.push(check("midpoint_geodesic_symmetry", geo_fail));

    let mut even_even_fail = None;
    'ee: for l in 1..=h.max_level() {
        let n_even = node_count(l - 1) as u32;
        for &(a, b) in h.edges(l) {
            if a < n_even && b < n_even {
                even_even_fail = Some(format!("level {l}: even-even edge ({a},{b})"));
                break 'ee;
            }
        }
    }
    checks.push(check("even_block_empty", even_even_fail));

    ValidationReport { checks }
}
