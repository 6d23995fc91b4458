//! Small directed-graph helpers shared by the CMG validator, the Markov-chain
//! oracle and the network topology checks.

use std::collections::VecDeque;

/// Breadth-first distances from `start`; `None` for unreachable nodes.
pub(crate) fn bfs_levels(adj: &[Vec<usize>], start: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    let mut queue = VecDeque::new();
    level[start] = Some(0);
    queue.push_back(start);
    while let Some(u) = queue.pop_front() {
        let next = level[u].map(|l| l + 1);
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = next;
                queue.push_back(v);
            }
        }
    }
    level
}

fn reversed(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut rev = vec![Vec::new(); adj.len()];
    for (u, out) in adj.iter().enumerate() {
        for &v in out {
            rev[v].push(u);
        }
    }
    rev
}

/// Nodes that are not in the same strongly connected class as node 0.
/// Empty iff the graph is strongly connected.
pub(crate) fn outside_class_of_zero(adj: &[Vec<usize>]) -> Vec<usize> {
    if adj.is_empty() {
        return Vec::new();
    }
    let fwd = bfs_levels(adj, 0);
    let bwd = bfs_levels(&reversed(adj), 0);
    (0..adj.len())
        .filter(|&v| fwd[v].is_none() || bwd[v].is_none())
        .collect()
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Period of a strongly connected directed graph: gcd over edges (u, v) of
/// `level(u) + 1 - level(v)` for BFS levels from node 0.
pub(crate) fn period(adj: &[Vec<usize>]) -> usize {
    let level = bfs_levels(adj, 0);
    let mut g = 0;
    for (u, out) in adj.iter().enumerate() {
        let Some(lu) = level[u] else { continue };
        for &v in out {
            if let Some(lv) = level[v] {
                g = gcd(g, (lu + 1).abs_diff(lv));
            }
        }
    }
    g
}

/// Adjacency of the support of a dense row-major square matrix.
pub(crate) fn support_adjacency(n: usize, entry: impl Fn(usize, usize) -> f64) -> Vec<Vec<usize>> {
    (0..n)
        .map(|i| (0..n).filter(|&j| entry(i, j) > 0.0).collect())
        .collect()
}
