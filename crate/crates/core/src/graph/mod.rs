//! Immutable undirected simple graphs with a canonical, id-derived edge order.
//!
//! Node ids are dense (`0..N`). Every edge is stored once as `(lo, hi)` with
//! `lo < hi`, and the global edge list is sorted lexicographically on that
//! pair. Because the order only depends on endpoint ids, two graphs that
//! share an edge agree on where it ranks, which is what makes clipping stable
//! across neighbouring graphs.

mod generate;
mod load;
mod neighbor;

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use generate::{generate, Model};
pub use load::{load_edge_list, load_edge_list_path, IdPolicy};
pub use neighbor::{make_node_neighbor, toggle_edge, Attach, NeighborPair};

pub type NodeId = usize;

/// Canonical undirected edge. The derived ordering is the global edge order:
/// lexicographic on `(lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub lo: NodeId,
    pub hi: NodeId,
}

impl Edge {
    /// Canonical form of `{u, v}`; `None` for self-loops.
    pub fn new(u: NodeId, v: NodeId) -> Option<Self> {
        match u.cmp(&v) {
            Ordering::Less => Some(Edge { lo: u, hi: v }),
            Ordering::Greater => Some(Edge { lo: v, hi: u }),
            Ordering::Equal => None,
        }
    }

    pub fn other(&self, v: NodeId) -> NodeId {
        if self.lo == v {
            self.hi
        } else {
            self.lo
        }
    }

    pub fn touches(&self, v: NodeId) -> bool {
        self.lo == v || self.hi == v
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    /// Sorted by edge order, so an edge's index is also its global rank.
    edges: Vec<Edge>,
    /// Per node, indices into `edges` in ascending order.
    adj: Vec<Vec<usize>>,
    /// Raw ids of the loaded file, indexed by dense id.
    raw_ids: Option<Vec<u64>>,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Graph {
            n,
            edges: Vec::new(),
            adj: vec![Vec::new(); n],
            raw_ids: None,
        }
    }

    /// Builds a simple graph on `n` nodes. Self-loops and duplicates (in
    /// either direction) are dropped.
    pub fn from_edges<I>(n: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (NodeId, NodeId)>,
    {
        let mut edges = Vec::new();
        for (u, v) in pairs {
            if u >= n || v >= n {
                return Err(invalid(format!("edge ({u}, {v}) out of range for {n} nodes")));
            }
            if let Some(e) = Edge::new(u, v) {
                edges.push(e);
            }
        }
        Ok(Self::from_canonical(n, edges))
    }

    /// `edges` must be canonical and in range; they are sorted and deduplicated here.
    pub(crate) fn from_canonical(n: usize, mut edges: Vec<Edge>) -> Self {
        edges.sort_unstable();
        edges.dedup();
        let mut adj = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            adj[e.lo].push(i);
            adj[e.hi].push(i);
        }
        Graph {
            n,
            edges,
            adj,
            raw_ids: None,
        }
    }

    pub(crate) fn with_raw_ids(mut self, raw: Vec<u64>) -> Self {
        debug_assert_eq!(raw.len(), self.n);
        self.raw_ids = Some(raw);
        self
    }

    pub fn raw_ids(&self) -> Option<&[u64]> {
        self.raw_ids.as_deref()
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// All edges in edge order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Indices (into [`Graph::edges`]) of the edges incident to `v`, in edge order.
    pub fn incident(&self, v: NodeId) -> &[usize] {
        &self.adj[v]
    }

    pub fn neighbors(&self, v: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adj[v].iter().map(move |&i| self.edges[i].other(v))
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adj[v].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adj.iter().map(Vec::len).collect()
    }

    /// deg(G); 0 for graphs without nodes.
    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        Edge::new(u, v).is_some_and(|e| self.edges.binary_search(&e).is_ok())
    }

    /// The k-th largest degree (1-based), i.e. `deg^k(G)`.
    pub fn kth_degree(&self, k: usize) -> Result<usize> {
        if k == 0 || k > self.n {
            return Err(invalid(format!("k = {k} outside 1..={}", self.n)));
        }
        let mut d = self.degrees();
        d.sort_unstable_by(|a, b| b.cmp(a));
        Ok(d[k - 1])
    }

    /// `N_τ(G)`: number of nodes with degree at least `tau`.
    pub fn count_at_least(&self, tau: f64) -> usize {
        self.adj.iter().filter(|a| a.len() as f64 >= tau).count()
    }

    /// Size of the symmetric difference of the two edge sets.
    pub fn edge_distance(&self, other: &Graph) -> usize {
        let (a, b) = (&self.edges, &other.edges);
        let (mut i, mut j, mut common) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    common += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        a.len() + b.len() - 2 * common
    }

    /// Same node set, keeping the edges whose index satisfies `keep`.
    pub fn edge_subgraph(&self, mut keep: impl FnMut(usize, &Edge) -> bool) -> Graph {
        let edges = self
            .edges
            .iter()
            .enumerate()
            .filter(|(i, e)| keep(*i, e))
            .map(|(_, e)| *e)
            .collect();
        let mut g = Self::from_canonical(self.n, edges);
        g.raw_ids = self.raw_ids.clone();
        g
    }

    /// Removes every edge touching a node in `removed`. Ids are kept, so the
    /// removed nodes stay behind as isolated nodes.
    pub fn without_nodes(&self, removed: &[bool]) -> Graph {
        self.edge_subgraph(|_, e| !removed[e.lo] && !removed[e.hi])
    }

    /// Subgraph relation on edge sets (same id space).
    pub fn is_edge_subgraph_of(&self, other: &Graph) -> bool {
        self.edges.iter().all(|e| other.edges.binary_search(e).is_ok())
    }

    /// Writes `u v` lines with dense ids, preceded by a node-count header.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# nodes: {}", self.n)?;
        for e in &self.edges {
            writeln!(out, "{} {}", e.lo, e.hi)?;
        }
        Ok(())
    }

    /// Two-path count `Σ_v C(deg(v), 2)`.
    pub fn two_path_count(&self) -> u64 {
        self.adj
            .iter()
            .map(|a| {
                let d = a.len() as u64;
                d * d.saturating_sub(1) / 2
            })
            .sum()
    }
}
