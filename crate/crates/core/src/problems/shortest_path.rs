use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::StandardFormLP;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, f64)", into = "(usize, usize, f64)")]
pub struct Arc {
    pub tail: usize,
    pub head: usize,
    pub weight: f64,
}

impl Arc {
    pub fn new(tail: usize, head: usize, weight: f64) -> Self {
        Self { tail, head, weight }
    }
}

impl From<(usize, usize, f64)> for Arc {
    fn from((tail, head, weight): (usize, usize, f64)) -> Self {
        Self { tail, head, weight }
    }
}

impl From<Arc> for (usize, usize, f64) {
    fn from(a: Arc) -> Self {
        (a.tail, a.head, a.weight)
    }
}

/// Directed weighted graph, serialized as `{"nodes": N, "arcs": [[t, h, w], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub nodes: usize,
    pub arcs: Vec<Arc>,
}

impl Graph {
    pub fn new(nodes: usize, arcs: Vec<Arc>) -> Self {
        Self { nodes, arcs }
    }

    /// DAG on `0..n` with the chain `i → i+1` always present and every other
    /// forward arc kept with probability `density`; weights uniform on `(0,1)`.
    pub fn random_dag<R: Rng + ?Sized>(rng: &mut R, n: usize, density: f64) -> Self {
        let mut arcs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if j == i + 1 || rng.random::<f64>() < density {
                    let w: f64 = rng.sample(rand::distr::Open01);
                    arcs.push(Arc::new(i, j, w));
                }
            }
        }
        Self::new(n, arcs)
    }

    pub fn check(&self) -> Result<()> {
        for (k, a) in self.arcs.iter().enumerate() {
            if a.tail >= self.nodes || a.head >= self.nodes {
                return Err(Error::InvalidInstance(format!("arc {k} references a missing node")));
            }
            if !a.weight.is_finite() {
                return Err(Error::NonFiniteEntry {
                    what: "arc weight",
                    index: k,
                });
            }
        }
        Ok(())
    }

    pub fn reachable(&self, source: usize, sink: usize) -> bool {
        let mut seen = vec![false; self.nodes];
        let mut queue = VecDeque::from([source]);
        seen[source] = true;
        while let Some(u) = queue.pop_front() {
            if u == sink {
                return true;
            }
            for a in self.arcs.iter().filter(|a| a.tail == u) {
                if !seen[a.head] {
                    seen[a.head] = true;
                    queue.push_back(a.head);
                }
            }
        }
        false
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: Graph = serde_json::from_str(text).map_err(|e| Error::InvalidInstance(e.to_string()))?;
        g.check()?;
        Ok(g)
    }
}

/// Unit-flow LP over the node–arc incidence matrix.
///
/// Column `k` has `+1` at the tail and `−1` at the head of arc `k`. The
/// source row is dropped (it is implied by the others), as is any row of a
/// node with no arcs. The right-hand side is `−1` on the sink row and `0`
/// elsewhere; costs are the arc weights.
pub fn build_shortest_path_lp(graph: &Graph, source: usize, sink: usize) -> Result<StandardFormLP> {
    graph.check()?;
    if source >= graph.nodes || sink >= graph.nodes {
        return Err(Error::InvalidInstance("source or sink out of range".into()));
    }
    if source == sink {
        return Err(Error::InvalidInstance("source and sink coincide".into()));
    }
    if let Some(k) = graph.arcs.iter().position(|a| !(a.weight > 0.0)) {
        return Err(Error::InvalidInstance(format!("arc {k} has non-positive weight")));
    }
    if !graph.reachable(source, sink) {
        return Err(Error::Unreachable { origin: source, sink });
    }
    let mut touched = vec![false; graph.nodes];
    for a in &graph.arcs {
        touched[a.tail] = true;
        touched[a.head] = true;
    }
    let rows: Vec<usize> = (0..graph.nodes).filter(|&v| v != source && touched[v]).collect();
    let mut row_of = vec![None; graph.nodes];
    for (r, &v) in rows.iter().enumerate() {
        row_of[v] = Some(r);
    }
    let mut a = DMatrix::zeros(rows.len(), graph.arcs.len());
    for (k, arc) in graph.arcs.iter().enumerate() {
        if let Some(r) = row_of[arc.tail] {
            a[(r, k)] += 1.0;
        }
        if let Some(r) = row_of[arc.head] {
            a[(r, k)] -= 1.0;
        }
    }
    let mut b = DVector::zeros(rows.len());
    b[row_of[sink].expect("sink has an incoming arc")] = -1.0;
    let c = DVector::from_iterator(graph.arcs.len(), graph.arcs.iter().map(|a| a.weight));
    Ok(StandardFormLP::new(a, b, c))
}
