//! Reachability by Floyd–Warshall over small digraphs.

use std::collections::BTreeSet;

use rand::Rng;

/// Pairs (i, j) joined by a path of one or more edges.
pub fn transitive_closure(nodes: usize, edges: &[(usize, usize)]) -> BTreeSet<(usize, usize)> {
    let mut reach = vec![vec![false; nodes]; nodes];
    for &(a, b) in edges {
        reach[a][b] = true;
    }
    for k in 0..nodes {
        for i in 0..nodes {
            if !reach[i][k] {
                continue;
            }
            for j in 0..nodes {
                if reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    for (i, row) in reach.iter().enumerate() {
        for (j, &r) in row.iter().enumerate() {
            if r {
                out.insert((i, j));
            }
        }
    }
    out
}

/// A random digraph with at most `max_nodes` nodes.
pub fn random_digraph(rng: &mut impl Rng, max_nodes: usize) -> (usize, Vec<(usize, usize)>) {
    let nodes = rng.random_range(1..=max_nodes);
    let density: f64 = rng.random_range(0.0..0.15);
    let mut edges = Vec::new();
    for a in 0..nodes {
        for b in 0..nodes {
            if rng.random_bool(density) {
                edges.push((a, b));
            }
        }
    }
    (nodes, edges)
}
