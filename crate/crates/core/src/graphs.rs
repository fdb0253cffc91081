//! Exact kNN graphs and their topological signatures.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg;

pub const DEFAULT_K: usize = 10;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("kNN graph with k={k} needs more than k points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("graph has no vertices")]
    EmptyGraph,
    #[error("edge ({0}, {1}) is a self-loop or out of range")]
    BadEdge(usize, usize),
    #[error("input contains non-finite values")]
    NonFinite,
}

/// Simple undirected graph with sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentGraph {
    adj: Vec<Vec<usize>>,
    /// Neighbour count used at construction; `None` for hand-built graphs.
    pub built_with_k: Option<usize>,
}

impl LatentGraph {
    /// Build from an edge list; duplicates and either orientation collapse.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u == v || u >= n || v >= n {
                return Err(GraphError::BadEdge(u, v));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        Ok(LatentGraph { adj, built_with_k: None })
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].binary_search(&v).is_ok()
    }

    /// Edges with `u < v`, lexicographic.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, list) in self.adj.iter().enumerate() {
            out.extend(list.iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        out
    }

    pub fn n_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Component label per vertex; labels follow the smallest member.
    pub fn components(&self) -> (usize, Vec<usize>) {
        let mut label = vec![usize::MAX; self.n()];
        let mut count = 0;
        for s in 0..self.n() {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = count;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.adj[u] {
                    if label[v] == usize::MAX {
                        label[v] = count;
                        queue.push_back(v);
                    }
                }
            }
            count += 1;
        }
        (count, label)
    }

    /// Hop distances from `s`; `usize::MAX` marks unreachable vertices.
    pub fn bfs_distances(&self, s: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n()];
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Dense combinatorial Laplacian `D − A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut l = DMatrix::zeros(n, n);
        for (u, list) in self.adj.iter().enumerate() {
            l[(u, u)] = list.len() as f64;
            for &v in list {
                l[(u, v)] = -1.0;
            }
        }
        l
    }
}

/// The `k` nearest other rows of row `i`; ties go to the smaller index.
fn nearest(x: &DMatrix<f64>, i: usize, k: usize) -> Vec<usize> {
    let n = x.nrows();
    let row = x.row(i);
    let mut cand: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != i)
        .map(|j| ((x.row(j) - row).norm_squared(), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    cand.select_nth_unstable_by(k - 1, cmp);
    cand.truncate(k);
    cand.sort_unstable_by(cmp);
    cand.into_iter().map(|(_, j)| j).collect()
}

/// Exact Euclidean kNN graph, symmetrized by union.
pub fn knn_graph(x: &DMatrix<f64>, k: usize) -> Result<LatentGraph, GraphError> {
    let n = x.nrows();
    if k == 0 {
        return Err(GraphError::ZeroK);
    }
    if n <= k {
        return Err(GraphError::TooFewPoints { n, k });
    }
    if !linalg::all_finite(x) {
        return Err(GraphError::NonFinite);
    }
    let lists: Vec<Vec<usize>> = (0..n).into_par_iter().map(|i| nearest(x, i, k)).collect();
    let edges: Vec<(usize, usize)> = lists.iter().enumerate().flat_map(|(i, l)| l.iter().map(move |&j| (i, j))).collect();
    let mut g = LatentGraph::from_edges(n, &edges)?;
    g.built_with_k = Some(k);
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSignatureReport {
    /// Mean fundamental-cycle length; missing for forests.
    pub cycle_length: Option<f64>,
    pub mean_square_clustering: f64,
    pub wiener_index: f64,
    /// Second-smallest combinatorial Laplacian eigenvalue.
    pub eigengap: f64,
    pub diameter: usize,
    pub n_components: usize,
    pub n: usize,
    pub n_edges: usize,
    pub built_with_k: Option<usize>,
}

impl GraphSignatureReport {
    /// `(name, value)` pairs for long-format export; a missing value is `None`.
    pub fn signature_rows(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("cycle_length", self.cycle_length),
            ("mean_square_clustering", Some(self.mean_square_clustering)),
            ("wiener_index", Some(self.wiener_index)),
            ("eigengap", Some(self.eigengap)),
            ("diameter", Some(self.diameter as f64)),
        ]
    }
}

pub fn graph_signatures(g: &LatentGraph, tree_seed: u64) -> Result<GraphSignatureReport, GraphError> {
    if g.n() == 0 {
        return Err(GraphError::EmptyGraph);
    }
    let (n_components, label) = g.components();
    let (wiener_index, diameter) = wiener_and_diameter(g);
    let cycles = fundamental_cycle_lengths(g, n_components, &label, tree_seed);
    let cycle_length = (!cycles.is_empty()).then(|| cycles.iter().sum::<usize>() as f64 / cycles.len() as f64);
    let eigengap = if n_components > 1 || g.n() < 2 {
        0.0
    } else {
        let (values, _) = linalg::sym_eigen_ascending(&g.laplacian());
        values[1].max(0.0)
    };
    Ok(GraphSignatureReport {
        cycle_length,
        mean_square_clustering: mean_square_clustering(g),
        wiener_index,
        eigengap,
        diameter,
        n_components,
        n: g.n(),
        n_edges: g.n_edges(),
        built_with_k: g.built_with_k,
    })
}

/// Sum of shortest-path distances over connected unordered pairs, and the
/// largest such distance.
pub fn wiener_and_diameter(g: &LatentGraph) -> (f64, usize) {
    let (sum, max) = (0..g.n())
        .into_par_iter()
        .map(|s| {
            let d = g.bfs_distances(s);
            let finite = d.iter().filter(|&&x| x != usize::MAX);
            let sum: u64 = finite.clone().map(|&x| x as u64).sum();
            (sum, finite.copied().max().unwrap_or(0))
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1.max(b.1)));
    // every pair was counted from both ends
    ((sum / 2) as f64, max)
}

/// `d_T(u, v) + 1` for every non-tree edge of a BFS spanning forest whose
/// root in each component is drawn with `tree_seed`.
pub fn fundamental_cycle_lengths(g: &LatentGraph, n_components: usize, label: &[usize], tree_seed: u64) -> Vec<usize> {
    let n = g.n();
    let mut members = vec![Vec::new(); n_components];
    for v in 0..n {
        members[label[v]].push(v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
    let mut parent = vec![usize::MAX; n];
    let mut depth = vec![0usize; n];
    for comp in &members {
        let root = comp[rng.random_range(0..comp.len())];
        parent[root] = root;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &v in g.neighbors(u) {
                if parent[v] == usize::MAX {
                    parent[v] = u;
                    depth[v] = depth[u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    g.edges()
        .into_iter()
        .filter(|&(u, v)| parent[u] != v && parent[v] != u)
        .map(|(mut u, mut v)| {
            let mut hops = 0;
            while depth[u] > depth[v] {
                u = parent[u];
                hops += 1;
            }
            while depth[v] > depth[u] {
                v = parent[v];
                hops += 1;
            }
            while u != v {
                u = parent[u];
                v = parent[v];
                hops += 2;
            }
            hops + 1
        })
        .collect()
}

/// Square clustering of one vertex: squares through `v` over the number of
/// potential squares, summed across neighbour pairs `u < w`. A pair with `q`
/// common neighbours besides `v` contributes `q` squares and
/// `(k_u − m) + (k_w − m) + q` potential ones, `m = 1 + q + [u ~ w]`.
pub fn square_clustering(g: &LatentGraph, v: usize) -> f64 {
    let nb = g.neighbors(v);
    let (mut squares, mut potential) = (0usize, 0usize);
    for (i, &u) in nb.iter().enumerate() {
        for &w in &nb[i + 1..] {
            let q = sorted_intersection_len(g.neighbors(u), g.neighbors(w)) - 1;
            let m = 1 + q + usize::from(g.has_edge(u, w));
            squares += q;
            potential += (g.degree(u) - m) + (g.degree(w) - m) + q;
        }
    }
    if potential > 0 {
        squares as f64 / potential as f64
    } else {
        0.0
    }
}

fn sorted_intersection_len(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut c) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                c += 1;
                i += 1;
                j += 1;
            }
        }
    }
    c
}

pub fn mean_square_clustering(g: &LatentGraph) -> f64 {
    // collected first so the sum order does not depend on the thread count
    let per_vertex: Vec<f64> = (0..g.n()).into_par_iter().map(|v| square_clustering(g, v)).collect();
    per_vertex.iter().sum::<f64>() / g.n() as f64
}
