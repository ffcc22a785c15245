use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Edge, Graph};
use crate::error::{invalid, Error, Result};

/// Synthetic graph families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Model {
    /// `K_{1,k}` with the center at id 0.
    Star(usize),
    Cycle(usize),
    Complete(usize),
    Gnp { n: usize, p: f64 },
    /// Barabási–Albert attachment: each new node links to `m` existing nodes
    /// chosen proportionally to degree, starting from a clique on `m + 1` nodes.
    Preferential { n: usize, m: usize },
}

pub fn generate<R: Rng + ?Sized>(model: &Model, rng: &mut R) -> Result<Graph> {
    match *model {
        Model::Star(k) => Graph::from_edges(k + 1, (1..=k).map(|i| (0, i))),
        Model::Cycle(n) => {
            if n < 3 {
                return Err(invalid(format!("cycle needs at least 3 nodes, got {n}")));
            }
            Graph::from_edges(n, (0..n).map(|i| (i, (i + 1) % n)))
        }
        Model::Complete(n) => {
            Graph::from_edges(n, (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))))
        }
        Model::Gnp { n, p } => {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("gnp probability {p} outside [0, 1]")));
            }
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.gen::<f64>() < p {
                        edges.push(Edge { lo: u, hi: v });
                    }
                }
            }
            Ok(Graph::from_canonical(n, edges))
        }
        Model::Preferential { n, m } => {
            if m == 0 {
                return Err(invalid("preferential attachment needs m >= 1"));
            }
            let seed = (m + 1).min(n);
            let mut edges = Vec::new();
            // every edge endpoint once, so uniform picks are degree-proportional
            let mut endpoints = Vec::new();
            for u in 0..seed {
                for v in u + 1..seed {
                    edges.push(Edge { lo: u, hi: v });
                    endpoints.push(u);
                    endpoints.push(v);
                }
            }
            let mut chosen = Vec::with_capacity(m);
            for v in seed..n {
                chosen.clear();
                while chosen.len() < m {
                    let t = *endpoints.choose(rng).expect("seed clique is non-empty");
                    if !chosen.contains(&t) {
                        chosen.push(t);
                    }
                }
                for &t in &chosen {
                    edges.push(Edge { lo: t, hi: v });
                    endpoints.push(t);
                    endpoints.push(v);
                }
            }
            Ok(Graph::from_canonical(n, edges))
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::Star(k) => write!(f, "star:{k}"),
            Model::Cycle(n) => write!(f, "cycle:{n}"),
            Model::Complete(n) => write!(f, "complete:{n}"),
            Model::Gnp { n, p } => write!(f, "gnp:{n}:{p}"),
            Model::Preferential { n, m } => write!(f, "pa:{n}:{m}"),
        }
    }
}

/// Parses `star:K`, `cycle:N`, `complete:N`, `gnp:N:P`, `pa:N:M`.
impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let int = |t: &str| {
            t.parse::<usize>()
                .map_err(|e| invalid(format!("generator `{s}`: {e}")))
        };
        match parts.as_slice() {
            ["star", k] => Ok(Model::Star(int(k)?)),
            ["cycle", n] => Ok(Model::Cycle(int(n)?)),
            ["complete", n] => Ok(Model::Complete(int(n)?)),
            ["gnp", n, p] => Ok(Model::Gnp {
                n: int(n)?,
                p: p.parse().map_err(|e| invalid(format!("generator `{s}`: {e}")))?,
            }),
            ["pa", n, m] => Ok(Model::Preferential {
                n: int(n)?,
                m: int(m)?,
            }),
            _ => Err(invalid(format!("unknown generator `{s}`"))),
        }
    }
}
