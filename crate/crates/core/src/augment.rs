//! The fixed augmentation pool used by plain GraphCL.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AugKind {
    NodeDrop,
    Subgraph,
    EdgePert,
    AttrMask,
    Identical,
}

impl AugKind {
    pub const ALL: [AugKind; 5] = [
        AugKind::NodeDrop,
        AugKind::Subgraph,
        AugKind::EdgePert,
        AugKind::AttrMask,
        AugKind::Identical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugKind::NodeDrop => "nodedrop",
            AugKind::Subgraph => "subgraph",
            AugKind::EdgePert => "edgepert",
            AugKind::AttrMask => "attrmask",
            AugKind::Identical => "identical",
        }
    }
}

impl fmt::Display for AugKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

/// A pair of augmentations applied to the two views of every anchor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationPolicy {
    pub first: AugKind,
    pub second: AugKind,
    pub ratio: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            first: AugKind::NodeDrop,
            second: AugKind::NodeDrop,
            ratio: 0.2,
        }
    }
}

impl AugmentationPolicy {
    pub fn apply_pair(&self, g: &Graph, rng: &mut impl Rng) -> Result<(Graph, Graph)> {
        let a = apply_augmentation(g, self.first, self.ratio, rng)?;
        let b = apply_augmentation(g, self.second, self.ratio, rng)?;
        Ok((a, b))
    }
}

/// Applies one augmentation from the pool.
///
/// Counts are `⌊ratio · n⌋` (or `⌊ratio · |E|⌋` for edges). Outputs always
/// keep at least one node.
pub fn apply_augmentation(g: &Graph, kind: AugKind, ratio: f64, rng: &mut impl Rng) -> Result<Graph> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("augmentation ratio {ratio} outside [0, 1]")));
    }
    let n = g.n();
    match kind {
        AugKind::Identical => Ok(g.clone()),
        AugKind::NodeDrop => {
            let drop = ((ratio * n as f64).floor() as usize).min(n - 1);
            if drop == 0 {
                return Ok(g.clone());
            }
            let mut dropped = vec![false; n];
            for i in sample(rng, n, drop) {
                dropped[i] = true;
            }
            let keep: Vec<usize> = (0..n).filter(|&i| !dropped[i]).collect();
            g.induced_subgraph(&keep)
        }
        AugKind::Subgraph => {
            let target = (((1.0 - ratio) * n as f64).ceil() as usize).clamp(1, n);
            if target == n {
                return Ok(g.clone());
            }
            let nodes = random_walk_nodes(g, target, rng);
            g.induced_subgraph(&nodes)
        }
        AugKind::EdgePert => {
            let m = g.num_edges();
            let k = (ratio * m as f64).floor() as usize;
            if k == 0 {
                return Ok(g.clone());
            }
            let mut non_edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if !g.has_edge(i, j) {
                        non_edges.push((i, j));
                    }
                }
            }
            let mut removed = vec![false; m];
            for e in sample(rng, m, k) {
                removed[e] = true;
            }
            let add = k.min(non_edges.len());
            let added: Vec<(usize, usize)> = sample(rng, non_edges.len(), add)
                .into_iter()
                .map(|i| non_edges[i])
                .collect();
            let mut edges = Vec::with_capacity(m);
            let mut attr_rows = Vec::with_capacity(m);
            for (e, &pair) in g.edges().iter().enumerate() {
                if !removed[e] {
                    edges.push(pair);
                    attr_rows.push(Some(e));
                }
            }
            for &pair in &added {
                edges.push(pair);
                attr_rows.push(None);
            }
            let attrs = match g.edge_attrs() {
                Some(a) if !edges.is_empty() => Some(Tensor::from_fn(edges.len(), a.cols(), |r, c| {
                    attr_rows[r].map_or(0.0, |src| a.get(src, c))
                })),
                _ => None,
            };
            Graph::with_edge_attrs(n, edges, g.x().clone(), attrs, g.label())
        }
        AugKind::AttrMask => {
            let k = (ratio * n as f64).floor() as usize;
            if k == 0 {
                return Ok(g.clone());
            }
            let mut x = g.x().clone();
            for i in sample(rng, n, k) {
                x.row_mut(i).fill(0.0);
            }
            g.with_features(x)
        }
    }
}

/// Uniform-neighbour walk from a uniform start until `target` distinct nodes
/// are collected. A walk that stops finding new nodes (stuck in an exhausted
/// component) jumps to a uniformly chosen unvisited node.
fn random_walk_nodes(g: &Graph, target: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = g.n();
    let adj = g.neighbors();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(target);
    let mut current = rng.random_range(0..n);
    visited[current] = true;
    order.push(current);
    let stall_limit = 10 * n;
    let mut stalled = 0;
    while order.len() < target {
        if adj[current].is_empty() || stalled >= stall_limit {
            let unvisited: Vec<usize> = (0..n).filter(|&i| !visited[i]).collect();
            current = unvisited[rng.random_range(0..unvisited.len())];
            stalled = 0;
        } else {
            current = adj[current][rng.random_range(0..adj[current].len())];
            stalled += 1;
        }
        if !visited[current] {
            visited[current] = true;
            order.push(current);
            stalled = 0;
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ring(n: usize) -> Graph {
        let edges = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let x = Tensor::from_fn(n, 3, |i, j| (i * 3 + j) as f64 + 1.0);
        Graph::new(n, edges, x, Some(1)).unwrap()
    }

    #[test]
    fn identical_is_identity() {
        let g = ring(6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(apply_augmentation(&g, AugKind::Identical, 0.7, &mut rng).unwrap(), g);
    }

    #[test]
    fn nodedrop_count() {
        let g = ring(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = apply_augmentation(&g, AugKind::NodeDrop, 0.2, &mut rng).unwrap();
        assert_eq!(out.n(), 8);
    }

    #[test]
    fn never_empty() {
        let g = ring(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in [AugKind::NodeDrop, AugKind::Subgraph] {
            let out = apply_augmentation(&g, kind, 1.0, &mut rng).unwrap();
            assert_eq!(out.n(), 1);
        }
    }

    #[test]
    fn edgepert_preserves_count() {
        let g = ring(12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = apply_augmentation(&g, AugKind::EdgePert, 0.2, &mut rng).unwrap();
        assert_eq!(out.num_edges(), g.num_edges());
        let k = (0.2 * g.num_edges() as f64).floor() as usize;
        let sym = g.edges().iter().filter(|e| !out.has_edge(e.0, e.1)).count()
            + out.edges().iter().filter(|e| !g.has_edge(e.0, e.1)).count();
        assert!(sym <= 2 * k);
    }

    #[test]
    fn subgraph_on_disconnected_graph_terminates() {
        let g = Graph::new(6, vec![(0, 1)], Tensor::ones(6, 1), None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = apply_augmentation(&g, AugKind::Subgraph, 0.2, &mut rng).unwrap();
        assert_eq!(out.n(), 5);
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("edgepert".parse::<AugKind>().unwrap(), AugKind::EdgePert);
        assert!(matches!("rotate".parse::<AugKind>(), Err(Error::UnknownKind(_))));
    }

    #[test]
    fn bad_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(apply_augmentation(&ring(4), AugKind::AttrMask, 1.5, &mut rng).is_err());
    }
}
