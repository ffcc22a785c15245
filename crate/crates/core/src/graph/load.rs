use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{Edge, Graph};
use crate::error::{Error, Result};

/// How raw ids in an edge list map onto dense node ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum IdPolicy {
    /// Dense ids in order of first appearance.
    #[default]
    Remap,
    /// Ids must already be dense (`0..N`).
    Strict,
}

/// Reads a whitespace-separated edge list.
///
/// Lines starting with `#` are comments, except a `# nodes: N` header which
/// fixes the node count (isolated nodes are appended after the listed ones).
/// Directed duplicates and self-loops are dropped.
pub fn load_edge_list<R: BufRead>(source: R, policy: IdPolicy) -> Result<Graph> {
    let mut header_nodes: Option<usize> = None;
    let mut raw_pairs: Vec<(u64, u64)> = Vec::new();

    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(rest) = comment.trim().strip_prefix("nodes:") {
                let n = rest.trim().parse::<usize>().map_err(|e| Error::Parse {
                    line: lineno,
                    message: format!("bad node-count header: {e}"),
                })?;
                header_nodes = Some(n);
            }
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<u64> {
            let tok = tok.ok_or_else(|| Error::Parse {
                line: lineno,
                message: "expected two node ids".into(),
            })?;
            tok.parse::<u64>().map_err(|e| Error::Parse {
                line: lineno,
                message: format!("`{tok}`: {e}"),
            })
        };
        let u = parse(tokens.next())?;
        let v = parse(tokens.next())?;
        if tokens.next().is_some() {
            return Err(Error::Parse {
                line: lineno,
                message: "trailing tokens after edge".into(),
            });
        }
        raw_pairs.push((u, v));
    }

    match policy {
        IdPolicy::Remap => {
            let mut index: HashMap<u64, usize> = HashMap::new();
            let mut raw_ids = Vec::new();
            let mut edges = Vec::with_capacity(raw_pairs.len());
            let mut id_of = |raw: u64| {
                *index.entry(raw).or_insert_with(|| {
                    raw_ids.push(raw);
                    raw_ids.len() - 1
                })
            };
            for (u, v) in raw_pairs {
                let (a, b) = (id_of(u), id_of(v));
                if let Some(e) = Edge::new(a, b) {
                    edges.push(e);
                }
            }
            let mut n = raw_ids.len();
            if let Some(h) = header_nodes {
                if h < n {
                    return Err(Error::NonDenseIds(format!(
                        "header declares {h} nodes but {n} distinct ids appear"
                    )));
                }
                // Isolated nodes get synthetic raw ids past the largest one seen.
                let mut next = raw_ids.iter().max().map_or(0, |m| m + 1);
                while n < h {
                    raw_ids.push(next);
                    next += 1;
                    n += 1;
                }
            }
            Ok(Graph::from_canonical(n, edges).with_raw_ids(raw_ids))
        }
        IdPolicy::Strict => {
            let max_id = raw_pairs.iter().map(|&(u, v)| u.max(v)).max();
            let n = match (header_nodes, max_id) {
                (Some(h), Some(m)) if m as usize >= h => {
                    return Err(Error::NonDenseIds(format!(
                        "id {m} out of range for header node count {h}"
                    )))
                }
                (Some(h), _) => h,
                (None, None) => 0,
                (None, Some(m)) => {
                    let n = m as usize + 1;
                    let mut seen = vec![false; n];
                    for &(u, v) in &raw_pairs {
                        seen[u as usize] = true;
                        seen[v as usize] = true;
                    }
                    if let Some(missing) = seen.iter().position(|s| !s) {
                        return Err(Error::NonDenseIds(format!(
                            "id {missing} never appears but {m} does"
                        )));
                    }
                    n
                }
            };
            let edges = raw_pairs
                .into_iter()
                .filter_map(|(u, v)| Edge::new(u as usize, v as usize))
                .collect();
            Ok(Graph::from_canonical(n, edges))
        }
    }
}

pub fn load_edge_list_path(path: &Path, policy: IdPolicy) -> Result<Graph> {
    let f = File::open(path)?;
    load_edge_list(BufReader::new(f), policy)
}
