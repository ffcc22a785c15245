//! Degree clipping that keeps node-neighbouring graphs close in edge distance.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::graph::Graph;

#[derive(Clone, Debug, Serialize)]
pub struct ClipReport {
    #[serde(skip_serializing)]
    pub clipped: Graph,
    pub tau: usize,
    pub removed_edges: usize,
    /// Nodes of the input with degree at least `tau`.
    pub saturated_nodes: usize,
    pub max_degree_after: usize,
}

impl ClipReport {
    fn new(input: &Graph, clipped: Graph, tau: usize) -> Self {
        ClipReport {
            tau,
            removed_edges: input.edge_count() - clipped.edge_count(),
            saturated_nodes: input.count_at_least(tau as f64),
            max_degree_after: clipped.max_degree(),
            clipped,
        }
    }
}

/// Keeps an edge iff it is among the `tau` smallest edges (in edge order) at
/// both of its endpoints.
pub fn clip_graph(g: &Graph, tau: usize) -> Result<ClipReport> {
    if tau < 1 {
        return Err(invalid("clipping threshold must be at least 1"));
    }
    let mut votes = vec![0u8; g.edge_count()];
    for v in 0..g.node_count() {
        for &i in g.incident(v).iter().take(tau) {
            votes[i] += 1;
        }
    }
    let clipped = g.edge_subgraph(|i, _| votes[i] == 2);
    Ok(ClipReport::new(g, clipped, tau))
}

/// Greedy endpoint-degree clipping: walk edges in edge order and keep each one
/// while both endpoints have fewer than `theta` retained edges.
pub fn pi_theta_clip(g: &Graph, theta: usize) -> ClipReport {
    let mut kept = vec![0usize; g.node_count()];
    let clipped = g.edge_subgraph(|_, e| {
        if kept[e.lo] < theta && kept[e.hi] < theta {
            kept[e.lo] += 1;
            kept[e.hi] += 1;
            true
        } else {
            false
        }
    });
    ClipReport::new(g, clipped, theta)
}

/// Edge-distance certificate `τ + k` for node neighbours clipped at `τ`.
pub fn clip_distance_bound(tau: usize, k: usize) -> usize {
    tau + k
}

/// `τ + N_τ(G)`: the certificate evaluated on the smaller graph of the pair.
pub fn certified_distance(g: &Graph, tau: usize) -> usize {
    clip_distance_bound(tau, g.count_at_least(tau as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, NeighborPair};

    fn star(k: usize) -> Graph {
        Graph::from_edges(k + 1, (1..=k).map(|i| (0, i))).unwrap()
    }

    fn wheel5() -> Graph {
        // v0 = 0 is the hub, v1..v5 form the cycle
        let mut e: Vec<(usize, usize)> = (1..=5).map(|i| (0, i)).collect();
        e.extend((1..=5).map(|i| (i, i % 5 + 1)));
        Graph::from_edges(6, e).unwrap()
    }

    fn pairs(g: &Graph) -> Vec<(usize, usize)> {
        g.edges().iter().map(|e| (e.lo, e.hi)).collect()
    }

    #[test]
    fn wheel_at_two_keeps_the_hub_triangle() {
        let p = NeighborPair::isolating(wheel5(), 0).unwrap();
        let ext = clip_graph(&p.extended, 2).unwrap();
        assert_eq!(pairs(&ext.clipped), vec![(0, 1), (0, 2), (1, 2)]);
        let base = clip_graph(&p.base, 2).unwrap();
        assert_eq!(base.clipped.edges(), p.base.edges());
        assert_eq!(base.clipped.edge_distance(&ext.clipped), 6);
    }

    #[test]
    fn star_clip() {
        let r = clip_graph(&star(3), 2).unwrap();
        assert_eq!(pairs(&r.clipped), vec![(0, 1), (0, 2)]);
        assert_eq!((r.removed_edges, r.saturated_nodes, r.max_degree_after), (1, 1, 2));
        assert!(clip_graph(&star(3), 0).is_err());
    }

    #[test]
    fn large_tau_is_identity() {
        let g = wheel5();
        let r = clip_graph(&g, g.max_degree()).unwrap();
        assert_eq!(r.clipped, g);
        assert_eq!(r.removed_edges, 0);
    }

    #[test]
    fn pi_theta_examples() {
        assert_eq!(pi_theta_clip(&wheel5(), 0).clipped.edge_count(), 0);
        let r = pi_theta_clip(&star(3), 2);
        assert_eq!(r.clipped.edges(), &[Edge { lo: 0, hi: 1 }, Edge { lo: 0, hi: 2 }]);
        let g = wheel5();
        assert_eq!(pi_theta_clip(&g, g.max_degree()).clipped, g);
    }

    #[test]
    fn greedy_keeps_more_than_mutual_rank_on_wheel() {
        let g = wheel5();
        assert_eq!(clip_graph(&g, 2).unwrap().clipped.edge_count(), 3);
        let greedy = pi_theta_clip(&g, 2).clipped;
        assert_eq!(pairs(&greedy), vec![(0, 1), (0, 2), (1, 2), (3, 4), (4, 5)]);
    }

    #[test]
    fn bounds() {
        assert_eq!(clip_distance_bound(4, 3), 7);
        assert_eq!(clip_distance_bound(5, 0), 5);
        assert_eq!(certified_distance(&star(4), 2), 3);
    }
}
