use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::problems::Graph;

#[derive(Debug, Clone, PartialEq)]
pub struct ShortestPath {
    /// Node sequence from source to sink.
    pub nodes: Vec<usize>,
    /// Arc indices along the path.
    pub arcs: Vec<usize>,
    pub length: f64,
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then lowest node index
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact shortest path for nonnegative weights. Among equal-length
/// predecessors the one with the lowest node index wins.
pub fn dijkstra(graph: &Graph, source: usize, sink: usize) -> Result<ShortestPath> {
    graph.check()?;
    let n = graph.nodes;
    if source >= n || sink >= n {
        return Err(Error::InvalidInstance(format!("node index out of range for {n} nodes")));
    }
    if graph.arcs.iter().any(|a| a.weight < 0.0) {
        return Err(Error::InvalidInstance("negative arc weight".into()));
    }
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, a) in graph.arcs.iter().enumerate() {
        out[a.tail].push(k);
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut done = vec![false; n];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Entry(0.0, source));
    while let Some(Entry(d, u)) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        for &k in &out[u] {
            let arc = &graph.arcs[k];
            let nd = d + arc.weight;
            let better = match pred[arc.head] {
                _ if nd < dist[arc.head] => true,
                Some(p) if nd == dist[arc.head] => graph.arcs[p].tail > u,
                _ => false,
            };
            if better && !done[arc.head] {
                dist[arc.head] = nd;
                pred[arc.head] = Some(k);
                heap.push(Entry(nd, arc.head));
            }
        }
    }
    if !dist[sink].is_finite() {
        return Err(Error::Unreachable { origin: source, sink });
    }
    let mut arcs = Vec::new();
    let mut nodes = vec![sink];
    let mut v = sink;
    while v != source {
        let k = pred[v].expect("reached node has a predecessor");
        arcs.push(k);
        v = graph.arcs[k].tail;
        nodes.push(v);
    }
    arcs.reverse();
    nodes.reverse();
    Ok(ShortestPath {
        nodes,
        arcs,
        length: dist[sink],
    })
}
