//! Network topology: symmetric graphs, dual-variable block layout and the
//! incidence structure behind the dual decomposition.
//!
//! Dual variables are laid out per directed edge. Node `i` owns one block
//! `lambda_ij` of size `p` for every neighbor `j`, stacked by ascending `j`,
//! and the global vector is `[lambda_0; lambda_1; ...; lambda_{n-1}]`.
//! A node's *neighborhood* vector stacks its own block first and then the
//! blocks of its neighbors in ascending order.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Node identifier, `0..n`.
pub type NodeId = usize;

/// Static, symmetric, connected graph without self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    neighbors: Vec<Vec<NodeId>>,
    directed_edges: Vec<(NodeId, NodeId)>,
    /// Start of node `i`'s edge blocks in the directed-edge ordering.
    edge_offsets: Vec<usize>,
}

impl Graph {
    /// Build a graph from undirected edges. Both orientations are implied.
    /// Duplicate edges are merged.
    pub fn from_undirected_edges(n: usize, edges: &[(NodeId, NodeId)]) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGraph(format!("need at least 2 nodes, got {n}")));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at node {i}")));
            }
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Self::from_neighbor_lists(neighbors)
    }

    fn from_neighbor_lists(neighbors: Vec<Vec<NodeId>>) -> Result<Self> {
        let n = neighbors.len();
        let mut directed_edges = Vec::new();
        let mut edge_offsets = Vec::with_capacity(n + 1);
        for (i, list) in neighbors.iter().enumerate() {
            edge_offsets.push(directed_edges.len());
            for &j in list {
                directed_edges.push((i, j));
            }
        }
        edge_offsets.push(directed_edges.len());
        let g = Graph {
            n,
            neighbors,
            directed_edges,
            edge_offsets,
        };
        if let Some(i) = g.neighbors.iter().position(|l| l.is_empty()) {
            return Err(Error::InvalidGraph(format!("node {i} is isolated")));
        }
        if !g.is_connected() {
            return Err(Error::InvalidGraph("graph is not connected".into()));
        }
        Ok(g)
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == self.n
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of directed edges (twice the number of undirected edges).
    pub fn m(&self) -> usize {
        self.directed_edges.len()
    }

    pub fn neighbors(&self, i: NodeId) -> &[NodeId] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: NodeId) -> usize {
        self.neighbors[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn directed_edges(&self) -> &[(NodeId, NodeId)] {
        &self.directed_edges
    }

    /// Undirected edges `(i, j)` with `i < j`, in directed-edge order.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.directed_edges.iter().copied().filter(|&(i, j)| i < j)
    }

    pub fn has_edge(&self, i: NodeId, j: NodeId) -> bool {
        i < self.n && self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Index of directed edge `(i, j)` in the global ordering.
    pub fn edge_index(&self, i: NodeId, j: NodeId) -> Option<usize> {
        let k = self.neighbors.get(i)?.binary_search(&j).ok()?;
        Some(self.edge_offsets[i] + k)
    }

    /// Index of the first edge owned by node `i` (edge units, not scalars).
    pub fn edge_offset(&self, i: NodeId) -> usize {
        self.edge_offsets[i]
    }

    /// Scalar range of `lambda_i` inside the global stacked dual vector.
    pub fn node_range(&self, i: NodeId, p: usize) -> std::ops::Range<usize> {
        self.edge_offsets[i] * p..self.edge_offsets[i + 1] * p
    }

    /// Graph Laplacian `L = diag(deg) - adjacency`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            l[(i, i)] = self.degree(i) as f64;
            for &j in &self.neighbors[i] {
                l[(i, j)] = -1.0;
            }
        }
        l
    }

    /// Serialize as the edge-list text format: `n e` on the first line, then
    /// one undirected edge `i j` per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.n, self.m() / 2);
        for (i, j) in self.undirected_edges() {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("empty edge list".into()))?;
        let (n, e) = parse_pair(header)?;
        let edges = lines.map(parse_pair).collect::<Result<Vec<_>>>()?;
        if edges.len() != e {
            return Err(Error::Parse(format!(
                "header announces {e} edges, found {}",
                edges.len()
            )));
        }
        Self::from_undirected_edges(n, &edges)
    }
}

fn parse_pair(line: &str) -> Result<(usize, usize)> {
    let mut it = line.split_whitespace().map(str::parse::<usize>);
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
        _ => Err(Error::Parse(format!("expected two integers, got {line:?}"))),
    }
}

/// Circulant graph where each node links to the `k/2` nearest nodes on each
/// side (modulo `n`).
pub fn regular_cycle(n: usize, k: usize) -> Result<Graph> {
    if !k.is_multiple_of(2) {
        return Err(Error::InvalidGraph(format!("degree {k} must be even")));
    }
    if k < 2 || k >= n {
        return Err(Error::InvalidGraph(format!("degree {k} must satisfy 2 <= k < n = {n}")));
    }
    let edges: Vec<_> = (0..n)
        .flat_map(|i| (1..=k / 2).map(move |s| (i, (i + s) % n)))
        .collect();
    Graph::from_undirected_edges(n, &edges)
}

/// Oriented incidence operator: the row block for directed edge `(i, j)`
/// maps stacked primal `x` (size `n*p`) to `x_i - x_j`.
pub fn incidence_operator(g: &Graph, p: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(g.m() * p, g.n() * p);
    for (e, &(i, j)) in g.directed_edges().iter().enumerate() {
        for k in 0..p {
            a[(e * p + k, i * p + k)] = 1.0;
            a[(e * p + k, j * p + k)] = -1.0;
        }
    }
    a
}

/// Layout of a node's neighborhood vector: owner block first, then the
/// neighbors' blocks in ascending id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborhoodIndex {
    pub owner: NodeId,
    pub block_order: Vec<NodeId>,
    /// Block sizes in edge units (`m_j`).
    pub block_edges: Vec<usize>,
    /// Scalar start offsets of each block; one trailing entry equal to the
    /// total length `M_i * p`.
    pub offsets: Vec<usize>,
    pub p: usize,
    /// Total number of edge blocks `M_i = m_i + sum_j m_j`.
    pub total_edges: usize,
    /// Scalar start offset of each block inside the global dual vector.
    global_starts: Vec<usize>,
}

impl NeighborhoodIndex {
    /// Scalar length `M_i * p`.
    pub fn dim(&self) -> usize {
        self.total_edges * self.p
    }

    pub fn block_range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    /// Position of `node` in `block_order`.
    pub fn position(&self, node: NodeId) -> Option<usize> {
        self.block_order.iter().position(|&j| j == node)
    }

    /// Gather the neighborhood vector from a global stacked vector.
    pub fn gather(&self, global: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for k in 0..self.block_order.len() {
            let r = self.block_range(k);
            let start = self.global_starts[k];
            out.rows_mut(r.start, r.len()).copy_from(&global.rows(start, r.len()));
        }
        out
    }

    /// Assemble the neighborhood vector from per-node blocks.
    pub fn gather_blocks<'a>(&self, block: impl Fn(NodeId) -> &'a DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (k, &j) in self.block_order.iter().enumerate() {
            let r = self.block_range(k);
            out.rows_mut(r.start, r.len()).copy_from(block(j));
        }
        out
    }

    /// Global scalar index of each neighborhood entry.
    pub fn global_indices(&self) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.dim());
        for k in 0..self.block_order.len() {
            let len = self.offsets[k + 1] - self.offsets[k];
            idx.extend(self.global_starts[k]..self.global_starts[k] + len);
        }
        idx
    }
}

pub fn neighborhood_index(g: &Graph, i: NodeId, p: usize) -> NeighborhoodIndex {
    let mut block_order = Vec::with_capacity(g.degree(i) + 1);
    block_order.push(i);
    block_order.extend_from_slice(g.neighbors(i));
    let block_edges: Vec<usize> = block_order.iter().map(|&j| g.degree(j)).collect();
    let mut offsets = Vec::with_capacity(block_order.len() + 1);
    let mut acc = 0;
    for &e in &block_edges {
        offsets.push(acc);
        acc += e * p;
    }
    offsets.push(acc);
    let global_starts = block_order.iter().map(|&j| g.node_range(j, p).start).collect();
    NeighborhoodIndex {
        owner: i,
        total_edges: block_edges.iter().sum(),
        block_order,
        block_edges,
        offsets,
        p,
        global_starts,
    }
}

/// Diagonal of the normalization matrix: every entry of node `j`'s block is
/// `1 / (m_j + 1)`.
pub fn normalization_matrix(idx: &NeighborhoodIndex) -> DVector<f64> {
    let mut d = DVector::zeros(idx.dim());
    for (k, &m_j) in idx.block_edges.iter().enumerate() {
        let w = 1.0 / (m_j as f64 + 1.0);
        for r in idx.block_range(k) {
            d[r] = w;
        }
    }
    d
}
