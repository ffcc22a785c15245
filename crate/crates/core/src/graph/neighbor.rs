use rand::Rng;

use super::{Edge, Graph, NodeId};
use crate::error::{invalid, Result};

/// Which existing nodes a freshly added node connects to.
#[derive(Clone, Debug, PartialEq)]
pub enum Attach {
    All,
    None,
    Nodes(Vec<NodeId>),
    /// Each existing node independently with probability `p`.
    Random(f64),
}

/// Two graphs on a shared id space that differ in one node and its edges.
///
/// `base` has the same node count as `extended`; the differing node is
/// present in `base` only as an isolated id so that edge sets compare directly.
#[derive(Clone, Debug)]
pub struct NeighborPair {
    pub base: Graph,
    pub extended: Graph,
    pub differing_node: NodeId,
}

impl NeighborPair {
    /// Pair obtained by stripping all edges of `v` from `extended`.
    pub fn isolating(extended: Graph, v: NodeId) -> Result<Self> {
        if v >= extended.node_count() {
            return Err(invalid(format!("node {v} not in graph")));
        }
        let base = extended.edge_subgraph(|_, e| !e.touches(v));
        Ok(NeighborPair {
            base,
            extended,
            differing_node: v,
        })
    }
}

/// Appends node `N` to `g` and connects it according to `attach`.
pub fn make_node_neighbor<R: Rng + ?Sized>(
    g: &Graph,
    attach: &Attach,
    rng: &mut R,
) -> Result<NeighborPair> {
    let n = g.node_count();
    let targets: Vec<NodeId> = match attach {
        Attach::All => (0..n).collect(),
        Attach::None => Vec::new(),
        Attach::Nodes(list) => {
            if let Some(&bad) = list.iter().find(|&&u| u >= n) {
                return Err(invalid(format!("attach target {bad} not in graph")));
            }
            list.clone()
        }
        Attach::Random(p) => {
            if !(0.0..=1.0).contains(p) {
                return Err(invalid(format!("attach probability {p} outside [0, 1]")));
            }
            (0..n).filter(|_| rng.gen::<f64>() < *p).collect()
        }
    };
    let mut edges = g.edges().to_vec();
    edges.extend(targets.into_iter().map(|u| Edge { lo: u, hi: n }));
    let extended = Graph::from_canonical(n + 1, edges);
    let base = Graph::from_canonical(n + 1, g.edges().to_vec());
    Ok(NeighborPair {
        base,
        extended,
        differing_node: n,
    })
}

/// `g` with the edge `{u, v}` inserted if absent or removed if present.
pub fn toggle_edge(g: &Graph, u: NodeId, v: NodeId) -> Result<Graph> {
    let e = Edge::new(u, v).ok_or_else(|| invalid("self-loop"))?;
    if e.hi >= g.node_count() {
        return Err(invalid(format!("edge ({u}, {v}) out of range")));
    }
    let mut edges = g.edges().to_vec();
    match edges.binary_search(&e) {
        Ok(i) => {
            edges.remove(i);
        }
        Err(i) => edges.insert(i, e),
    }
    Ok(Graph::from_canonical(g.node_count(), edges))
}
