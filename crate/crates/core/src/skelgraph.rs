//! The 33-landmark pose skeleton, its hop decomposition and Laplacians.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const POSE_JOINTS: usize = 33;

pub const POSE_JOINT_NAMES: [&str; POSE_JOINTS] = [
    "nose",
    "left eye inner",
    "left eye",
    "left eye outer",
    "right eye inner",
    "right eye",
    "right eye outer",
    "left ear",
    "right ear",
    "mouth left",
    "mouth right",
    "left shoulder",
    "right shoulder",
    "left elbow",
    "right elbow",
    "left wrist",
    "right wrist",
    "left pinky",
    "right pinky",
    "left index",
    "right index",
    "left thumb",
    "right thumb",
    "left hip",
    "right hip",
    "left knee",
    "right knee",
    "left ankle",
    "right ankle",
    "left heel",
    "right heel",
    "left foot index",
    "right foot index",
];

/// Standard pose-landmark connections.
pub const POSE_EDGES: [(usize, usize); 35] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 7),
    (0, 4),
    (4, 5),
    (5, 6),
    (6, 8),
    (9, 10),
    (11, 12),
    (11, 13),
    (13, 15),
    (15, 17),
    (15, 19),
    (15, 21),
    (17, 19),
    (12, 14),
    (14, 16),
    (16, 18),
    (16, 20),
    (16, 22),
    (18, 20),
    (11, 23),
    (12, 24),
    (23, 24),
    (23, 25),
    (24, 26),
    (25, 27),
    (26, 28),
    (27, 29),
    (28, 30),
    (29, 31),
    (30, 32),
    (27, 31),
    (28, 32),
];

/// Nose-to-shoulder links joining the face to the torso. The mouth pair
/// (9, 10) stays a separate island in the standard set, so it is tied to the
/// nose as well.
pub const BRIDGE_EDGES: [(usize, usize); 4] = [(0, 11), (0, 12), (0, 9), (0, 10)];

/// Undirected joint graph without self-loops.
#[derive(Debug, Clone)]
pub struct SkeletonTopology {
    joint_count: usize,
    edges: Vec<(usize, usize)>,
    joint_names: Vec<String>,
    neighbours: Vec<Vec<usize>>,
}

impl SkeletonTopology {
    pub fn new(joint_count: usize, edges: &[(usize, usize)], joint_names: Vec<String>) -> Result<Self> {
        if joint_names.len() != joint_count {
            return Err(Error::invalid(format!(
                "{} joint names for {joint_count} joints",
                joint_names.len()
            )));
        }
        let mut neighbours = vec![Vec::new(); joint_count];
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= joint_count || b >= joint_count {
                return Err(Error::invalid(format!("edge ({a}, {b}) out of range")));
            }
            if a == b {
                return Err(Error::invalid(format!("self-loop on joint {a}")));
            }
            let e = (a.min(b), a.max(b));
            if canon.contains(&e) {
                continue;
            }
            canon.push(e);
            neighbours[a].push(b);
            neighbours[b].push(a);
        }
        for n in &mut neighbours {
            n.sort_unstable();
        }
        Ok(SkeletonTopology {
            joint_count,
            edges: canon,
            joint_names,
            neighbours,
        })
    }

    /// The shipped 33-joint pose graph: standard connections plus bridges.
    pub fn pose33() -> Self {
        let mut edges = POSE_EDGES.to_vec();
        edges.extend_from_slice(&BRIDGE_EDGES);
        Self::new(
            POSE_JOINTS,
            &edges,
            POSE_JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        )
        .expect("shipped pose topology is valid")
    }

    /// Unnamed graph, mainly for tests and toy examples.
    pub fn from_edges(joint_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::new(
            joint_count,
            edges,
            (0..joint_count).map(|i| format!("j{i}")).collect(),
        )
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn adjacency(&self) -> Tensor {
        let n = self.joint_count;
        let mut a = Tensor::zeros(&[n, n]);
        for &(i, j) in &self.edges {
            a.set(&[i, j], 1.0);
            a.set(&[j, i], 1.0);
        }
        a
    }

    /// BFS distances from `source`; `None` marks unreachable joints.
    pub fn distances_from(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.joint_count];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("queued nodes have a distance");
            for &v in &self.neighbours[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Minimum number of edges between `i` and `j`.
    pub fn hop_distance(&self, i: usize, j: usize) -> Result<usize> {
        if i >= self.joint_count || j >= self.joint_count {
            return Err(Error::invalid(format!("joint pair ({i}, {j}) out of range")));
        }
        self.distances_from(i)[j].ok_or(Error::Disconnected { i, j })
    }

    pub fn is_connected(&self) -> bool {
        self.joint_count == 0 || self.distances_from(0).iter().all(Option::is_some)
    }
}

/// Per-hop adjacency shells `A_k` (`A_k[i][j] = 1` iff `d(i, j) == k`) with
/// their degree matrices and symmetric normalisations.
#[derive(Debug, Clone)]
pub struct HopAdjacencySet {
    max_hop: usize,
    raw: Vec<Tensor>,
    degrees: Vec<Tensor>,
    normalized: Vec<Tensor>,
}

impl HopAdjacencySet {
    pub fn max_hop(&self) -> usize {
        self.max_hop
    }

    /// Number of hop matrices, `K + 1`.
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.raw[0].shape()[0]
    }

    pub fn raw(&self) -> &[Tensor] {
        &self.raw
    }

    pub fn degrees(&self) -> &[Tensor] {
        &self.degrees
    }

    pub fn normalized(&self) -> &[Tensor] {
        &self.normalized
    }
}

pub fn build_hops(topology: &SkeletonTopology, max_hop: usize) -> Result<HopAdjacencySet> {
    if max_hop < 1 {
        return Err(Error::invalid("max hop must be at least 1"));
    }
    let n = topology.joint_count();
    let mut raw = vec![Tensor::zeros(&[n, n]); max_hop + 1];
    for i in 0..n {
        for (j, d) in topology.distances_from(i).into_iter().enumerate() {
            if let Some(d) = d.filter(|&d| d <= max_hop) {
                raw[d].set(&[i, j], 1.0);
            }
        }
    }
    let mut degrees = Vec::with_capacity(raw.len());
    let mut normalized = Vec::with_capacity(raw.len());
    for a in &raw {
        let (norm, deg) = normalize_hop(a)?;
        degrees.push(deg);
        normalized.push(norm);
    }
    Ok(HopAdjacencySet {
        max_hop,
        raw,
        degrees,
        normalized,
    })
}

/// `D^{-1/2} (A + I) D^{-1/2}` where `D` is the degree matrix of `A + I`.
///
/// Returns the normalised matrix and `D`.
pub fn normalize_hop(a: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, m) = a.dims2()?;
    if n != m {
        return Err(Error::shape("normalize_hop", a.shape(), &[m, n]));
    }
    for i in 0..n {
        for j in 0..i {
            if a.at(&[i, j]) != a.at(&[j, i]) {
                return Err(Error::invalid(format!(
                    "adjacency is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let with_self = a.add(&Tensor::eye(n))?;
    let deg: Vec<f64> = (0..n).map(|i| with_self.row(i).iter().sum()).collect();
    let norm = Tensor::from_fn(&[n, n], |k| {
        let (i, j) = (k / n, k % n);
        with_self.data()[k] / (deg[i] * deg[j]).sqrt()
    });
    let mut d = Tensor::zeros(&[n, n]);
    for (i, &v) in deg.iter().enumerate() {
        d.set(&[i, i], v);
    }
    Ok((norm, d))
}

/// `L = D − A`, or `I − D^{-1/2} A D^{-1/2}` when `normalized`.
///
/// Isolated joints (degree 0) get a zero row in the normalised form.
pub fn laplacian(topology: &SkeletonTopology, normalized: bool) -> Tensor {
    let a = topology.adjacency();
    let n = topology.joint_count();
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    Tensor::from_fn(&[n, n], |k| {
        let (i, j) = (k / n, k % n);
        let aij = a.data()[k];
        if normalized {
            let scale = if deg[i] > 0.0 && deg[j] > 0.0 {
                aij / (deg[i] * deg[j]).sqrt()
            } else {
                0.0
            };
            let diag = if i == j && deg[i] > 0.0 { 1.0 } else { 0.0 };
            diag - scale
        } else if i == j {
            deg[i] - aij
        } else {
            -aij
        }
    })
}

/// Renders a matrix as CSV: one line per row, comma-separated reals.
pub fn matrix_csv(t: &Tensor) -> Result<String> {
    let (r, _) = t.dims2()?;
    let mut out = String::new();
    for i in 0..r {
        let line: Vec<String> = t.row(i).iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    Ok(out)
}
