//! Prototypical anchors, Jaccard concept overlap and cluster matching.
//!
//! A cloud is partitioned by seeded k-means; from each cluster `rho` rows are
//! sampled and averaged into a prototype. Two models' partitions over the same
//! samples are compared by the Jaccard overlap of their clusters, which the
//! three matching schemes consume.

mod hungarian;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kmeans::kmeans;
use crate::linalg::{self, serde_matrix};

pub use hungarian::solve_min_cost;

/// Lloyd iteration cap for every clustering in this module.
pub const KMEANS_MAX_ITER: usize = 300;

/// Eigengaps closer than this count as equal.
pub const GAP_TIE_TOL: f64 = 1e-9;

/// Offset mixed into the seed for anchor sampling so that it does not reuse
/// the clustering stream.
const SAMPLING_STREAM: u64 = 0x5EED_A9C0_0000_0001;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConceptError {
    #[error("kappa={kappa} and rho={rho} need at least {} rows, got {n}", kappa * rho)]
    TooFewSamples { kappa: usize, rho: usize, n: usize },
    #[error("kappa and rho must be positive")]
    ZeroParameter,
    #[error("cluster {cluster} has {size} members, fewer than rho={rho}")]
    EmptyCluster { cluster: usize, size: usize, rho: usize },
    #[error("invalid anchor sets: {0}")]
    InvalidAnchors(String),
    #[error("assignment lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("similarity matrix contains a non-finite value")]
    NonFinite,
    #[error("similarity matrix contains a negative value")]
    NegativeEntry,
}

/// Prototype vectors, the anchor rows they average, and the cluster label of
/// every row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototypes {
    /// κ × d', one prototype per row.
    #[serde(with = "serde_matrix")]
    pub p: DMatrix<f64>,
    /// Sorted row indices, one set per prototype.
    pub anchor_sets: Vec<Vec<usize>>,
    pub assignment: Vec<usize>,
}

impl Prototypes {
    pub fn kappa(&self) -> usize {
        self.anchor_sets.len()
    }
}

/// Compression map applied to a block of anchor rows before averaging.
pub type Psi<'a> = &'a dyn Fn(&DMatrix<f64>) -> DMatrix<f64>;

/// Prototypes with ψ = identity.
pub fn prototypical_anchors(
    x: &DMatrix<f64>,
    kappa: usize,
    rho: usize,
    seed: u64,
    existing: Option<&Prototypes>,
) -> Result<Prototypes, ConceptError> {
    prototypical_anchors_with(x, kappa, rho, seed, existing, &|block| block.clone())
}

/// Cluster `x` into `kappa` groups and average `rho` sampled members of each.
///
/// When `existing` is given its anchor sets and assignment are reused as-is,
/// no clustering or sampling happens, and `kappa`/`rho`/`seed` are ignored.
pub fn prototypical_anchors_with(
    x: &DMatrix<f64>,
    kappa: usize,
    rho: usize,
    seed: u64,
    existing: Option<&Prototypes>,
    psi: Psi<'_>,
) -> Result<Prototypes, ConceptError> {
    let n = x.nrows();
    if let Some(given) = existing {
        validate_anchor_sets(&given.anchor_sets, &given.assignment, n)?;
        let p = anchor_means(x, &given.anchor_sets, psi);
        return Ok(Prototypes { p, anchor_sets: given.anchor_sets.clone(), assignment: given.assignment.clone() });
    }
    if kappa == 0 || rho == 0 {
        return Err(ConceptError::ZeroParameter);
    }
    if kappa.saturating_mul(rho) > n {
        return Err(ConceptError::TooFewSamples { kappa, rho, n });
    }
    let clustering = kmeans(x, kappa, seed, KMEANS_MAX_ITER);
    let mut members = vec![Vec::new(); kappa];
    for (i, &c) in clustering.assignment.iter().enumerate() {
        members[c].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SAMPLING_STREAM);
    let mut anchor_sets = Vec::with_capacity(kappa);
    for (cluster, rows) in members.iter().enumerate() {
        if rows.len() < rho {
            return Err(ConceptError::EmptyCluster { cluster, size: rows.len(), rho });
        }
        let mut picked: Vec<usize> = index::sample(&mut rng, rows.len(), rho).into_iter().map(|t| rows[t]).collect();
        picked.sort_unstable();
        anchor_sets.push(picked);
    }
    let p = anchor_means(x, &anchor_sets, psi);
    Ok(Prototypes { p, anchor_sets, assignment: clustering.assignment })
}

fn validate_anchor_sets(sets: &[Vec<usize>], assignment: &[usize], n: usize) -> Result<(), ConceptError> {
    if sets.is_empty() {
        return Err(ConceptError::InvalidAnchors("no anchor sets".into()));
    }
    if assignment.len() != n {
        return Err(ConceptError::InvalidAnchors(format!("assignment has {} entries for {n} rows", assignment.len())));
    }
    let mut seen = vec![false; n];
    for (j, set) in sets.iter().enumerate() {
        if set.is_empty() {
            return Err(ConceptError::InvalidAnchors(format!("anchor set {j} is empty")));
        }
        for &i in set {
            if i >= n {
                return Err(ConceptError::InvalidAnchors(format!("index {i} out of range for {n} rows")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(ConceptError::InvalidAnchors(format!("index {i} appears in two anchor sets")));
            }
        }
    }
    Ok(())
}

fn anchor_means(x: &DMatrix<f64>, sets: &[Vec<usize>], psi: Psi<'_>) -> DMatrix<f64> {
    let rows: Vec<_> = sets
        .iter()
        .map(|set| {
            let block = psi(&x.select_rows(set));
            linalg::column_means(&block).transpose()
        })
        .collect();
    DMatrix::from_rows(&rows)
}

/// Pairwise cluster overlap between two partitions of the same samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaccardMatrix {
    /// k_A × k_B, entries in [0, 1].
    #[serde(with = "serde_matrix")]
    pub j: DMatrix<f64>,
}

impl JaccardMatrix {
    /// Wrap an arbitrary similarity matrix for the matching routines.
    pub fn from_matrix(j: DMatrix<f64>) -> Self {
        JaccardMatrix { j }
    }

    pub fn k_a(&self) -> usize {
        self.j.nrows()
    }

    pub fn k_b(&self) -> usize {
        self.j.ncols()
    }

    fn check(&self, allow_negative: bool) -> Result<(), ConceptError> {
        if !linalg::all_finite(&self.j) {
            return Err(ConceptError::NonFinite);
        }
        if !allow_negative && self.j.iter().any(|&v| v < 0.0) {
            return Err(ConceptError::NegativeEntry);
        }
        Ok(())
    }
}

/// `J[i][j] = |C_i ∩ C_j| / |C_i ∪ C_j|`; cluster ids index rows and columns,
/// so k_A = max(assign_a) + 1. An empty union gives 0.
pub fn jaccard_matrix(assign_a: &[usize], assign_b: &[usize]) -> Result<JaccardMatrix, ConceptError> {
    if assign_a.len() != assign_b.len() {
        return Err(ConceptError::LengthMismatch(assign_a.len(), assign_b.len()));
    }
    let ka = assign_a.iter().max().map_or(0, |m| m + 1);
    let kb = assign_b.iter().max().map_or(0, |m| m + 1);
    let mut inter = DMatrix::<f64>::zeros(ka, kb);
    let mut size_a = vec![0usize; ka];
    let mut size_b = vec![0usize; kb];
    for (&a, &b) in assign_a.iter().zip(assign_b) {
        inter[(a, b)] += 1.0;
        size_a[a] += 1;
        size_b[b] += 1;
    }
    let j = DMatrix::from_fn(ka, kb, |a, b| {
        let union = (size_a[a] + size_b[b]) as f64 - inter[(a, b)];
        if union > 0.0 {
            inter[(a, b)] / union
        } else {
            0.0
        }
    });
    Ok(JaccardMatrix { j })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchScheme {
    Hungarian,
    Injected,
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedClusters {
    pub a: usize,
    pub b: usize,
    pub similarity: f64,
}

/// A joint group of A-side and B-side cluster nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeGroup {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    pub scheme: MatchScheme,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<MatchedClusters>,
    /// Mean similarity over matched pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_similarity: Option<f64>,
    /// Spectral node groups.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<NodeGroup>,
    /// Injected sample groups: row indices per cluster.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sample_groups: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_est: Option<usize>,
    /// Ascending normalized-Laplacian spectrum of the non-isolated nodes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eigenvalues: Vec<f64>,
}

impl Matching {
    fn empty(scheme: MatchScheme) -> Self {
        Matching {
            scheme,
            pairs: Vec::new(),
            mean_similarity: None,
            groups: Vec::new(),
            sample_groups: Vec::new(),
            k_est: None,
            eigenvalues: Vec::new(),
        }
    }

    pub fn total_similarity(&self) -> f64 {
        self.pairs.iter().map(|p| p.similarity).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("matching serializes")
    }
}

/// Maximum-total-similarity one-to-one matching. Rectangular inputs are
/// padded with zeros; only pairs between real clusters are reported.
pub fn hungarian_match(j: &JaccardMatrix) -> Result<Matching, ConceptError> {
    j.check(true)?;
    let (ka, kb) = (j.k_a(), j.k_b());
    let n = ka.max(kb);
    let cost = DMatrix::from_fn(n, n, |r, c| if r < ka && c < kb { -j.j[(r, c)] } else { 0.0 });
    let perm = solve_min_cost(&cost);
    let pairs: Vec<_> = perm
        .iter()
        .enumerate()
        .filter(|&(a, &b)| a < ka && b < kb)
        .map(|(a, &b)| MatchedClusters { a, b, similarity: j.j[(a, b)] })
        .collect();
    let mut m = Matching::empty(MatchScheme::Hungarian);
    if !pairs.is_empty() {
        m.mean_similarity = Some(pairs.iter().map(|p| p.similarity).sum::<f64>() / pairs.len() as f64);
    }
    m.pairs = pairs;
    Ok(m)
}

/// B adopts A's partition, so cluster `j` matches cluster `j` with overlap 1.
pub fn injected_match(assign_a: &[usize]) -> Matching {
    let k = assign_a.iter().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); k];
    for (i, &c) in assign_a.iter().enumerate() {
        groups[c].push(i);
    }
    let mut m = Matching::empty(MatchScheme::Injected);
    m.pairs = (0..k).map(|c| MatchedClusters { a: c, b: c, similarity: 1.0 }).collect();
    m.mean_similarity = (k > 0).then_some(1.0);
    m.sample_groups = groups;
    m
}

/// Many-to-many matching by spectral clustering of the bipartite similarity
/// graph. Zero-degree nodes are dropped before the eigensolve and returned as
/// singleton groups.
pub fn spectral_match(j: &JaccardMatrix, seed: u64) -> Result<Matching, ConceptError> {
    j.check(false)?;
    let (ka, kb) = (j.k_a(), j.k_b());
    let total = ka + kb;
    let weight = |u: usize, v: usize| -> f64 {
        match (u < ka, v < ka) {
            (true, false) => j.j[(u, v - ka)],
            (false, true) => j.j[(v, u - ka)],
            _ => 0.0,
        }
    };
    let degree: Vec<f64> = (0..total).map(|u| (0..total).map(|v| weight(u, v)).sum()).collect();
    let active: Vec<usize> = (0..total).filter(|&u| degree[u] > 0.0).collect();
    let mut m = Matching::empty(MatchScheme::Spectral);
    let node_group = |nodes: &[usize]| {
        let mut g = NodeGroup { a: Vec::new(), b: Vec::new() };
        for &u in nodes {
            if u < ka {
                g.a.push(u);
            } else {
                g.b.push(u - ka);
            }
        }
        g
    };
    let mut groups: Vec<Vec<usize>> = (0..total).filter(|u| degree[*u] == 0.0).map(|u| vec![u]).collect();

    let size = active.len();
    if size > 0 {
        let inv_sqrt: Vec<f64> = active.iter().map(|&u| degree[u].sqrt().recip()).collect();
        let lap = DMatrix::from_fn(size, size, |r, c| {
            let off = weight(active[r], active[c]) * inv_sqrt[r] * inv_sqrt[c];
            if r == c {
                1.0 - off
            } else {
                -off
            }
        });
        let (values, vectors) = linalg::sym_eigen_ascending(&lap);
        let k_est = spectral_gap_k(values.as_slice());
        let mut embed = vectors.columns(0, k_est).into_owned();
        for mut row in embed.row_iter_mut() {
            let norm = row.norm();
            if norm > 0.0 {
                row /= norm;
            }
        }
        let clusters = kmeans(&embed, k_est, seed, KMEANS_MAX_ITER);
        let mut joint = vec![Vec::new(); k_est];
        for (r, &c) in clusters.assignment.iter().enumerate() {
            joint[c].push(active[r]);
        }
        groups.extend(joint.into_iter().filter(|g| !g.is_empty()));
        m.k_est = Some(k_est);
        m.eigenvalues = values.iter().copied().collect();
    }
    groups.sort();
    m.groups = groups.iter().map(|g| node_group(g)).collect();
    Ok(m)
}

/// `argmax_ℓ (λ_{ℓ+1} − λ_ℓ) + 1` over ℓ = 1..=N−2 (0-indexed, ascending λ),
/// smallest ℓ on ties (gaps within `GAP_TIE_TOL`). Fewer than three
/// eigenvalues give 1.
pub fn spectral_gap_k(ascending: &[f64]) -> usize {
    let n = ascending.len();
    if n < 3 {
        return 1;
    }
    let mut best = (f64::NEG_INFINITY, 1);
    for l in 1..=n - 2 {
        let gap = ascending[l + 1] - ascending[l];
        if gap > best.0 + GAP_TIE_TOL {
            best = (gap, l);
        }
    }
    best.1 + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::RngExt;
    use rand_distr::{Distribution, Normal};
    use std::collections::BTreeSet;

    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }

    /// Exhaustive best total over all injective maps of the smaller side.
    fn brute_force_best(j: &DMatrix<f64>) -> f64 {
        let (r, c) = (j.nrows(), j.ncols());
        let n = r.max(c);
        permutations(n)
            .iter()
            .map(|p| (0..r).filter(|&i| p[i] < c).map(|i| j[(i, p[i])]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn brute_force_jaccard(a: &[usize], b: &[usize]) -> DMatrix<f64> {
        let ka = a.iter().max().map_or(0, |m| m + 1);
        let kb = b.iter().max().map_or(0, |m| m + 1);
        DMatrix::from_fn(ka, kb, |i, j| {
            let sa: BTreeSet<usize> = (0..a.len()).filter(|&t| a[t] == i).collect();
            let sb: BTreeSet<usize> = (0..b.len()).filter(|&t| b[t] == j).collect();
            let union = sa.union(&sb).count();
            if union == 0 {
                0.0
            } else {
                sa.intersection(&sb).count() as f64 / union as f64
            }
        })
    }

    fn blobs(centers: &[[f64; 2]], per: usize, sigma: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut rows = Vec::new();
        for c in centers {
            for _ in 0..per {
                rows.push(c[0] + noise.sample(&mut rng));
                rows.push(c[1] + noise.sample(&mut rng));
            }
        }
        DMatrix::from_row_slice(centers.len() * per, 2, &rows)
    }

    #[test]
    fn blob_prototypes_near_generator_means() {
        let per = 200;
        let sigma = 0.5;
        let x = blobs(&[[0.0, 0.0], [20.0, 20.0]], per, sigma, 5);
        let p = prototypical_anchors(&x, 2, per, 1, None).unwrap();
        let bound = 3.0 * sigma / (per as f64).sqrt();
        for target in [[0.0, 0.0], [20.0, 20.0]] {
            let best = (0..2)
                .map(|r| (p.p[(r, 0)] - target[0]).abs().max((p.p[(r, 1)] - target[1]).abs()))
                .fold(f64::INFINITY, f64::min);
            assert!(best < bound, "prototype off by {best}, bound {bound}");
        }
    }

    #[test]
    fn single_cluster_is_mean_of_samples() {
        let x = DMatrix::from_fn(20, 3, |i, j| (i * 3 + j) as f64);
        let p = prototypical_anchors(&x, 1, 5, 4, None).unwrap();
        assert_eq!(p.anchor_sets[0].len(), 5);
        let mean = linalg::column_means(&x.select_rows(&p.anchor_sets[0]));
        assert_eq!(p.p.row(0), mean.transpose());
    }

    #[test]
    fn existing_anchor_sets_skip_clustering() {
        let x = DMatrix::from_fn(6, 2, |i, j| (i + 10 * j) as f64);
        let given = Prototypes { p: DMatrix::zeros(0, 2), anchor_sets: vec![vec![0, 1], vec![4, 5]], assignment: vec![0, 0, 0, 1, 1, 1] };
        let a = prototypical_anchors(&x, 99, 99, 1, Some(&given)).unwrap();
        let b = prototypical_anchors(&x, 99, 99, 2, Some(&given)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.p, DMatrix::from_row_slice(2, 2, &[0.5, 10.5, 4.5, 14.5]));
    }

    #[test]
    fn anchor_errors() {
        let x = DMatrix::from_fn(6, 2, |i, j| (i * j) as f64);
        assert_eq!(prototypical_anchors(&x, 0, 1, 0, None), Err(ConceptError::ZeroParameter));
        assert_eq!(prototypical_anchors(&x, 4, 2, 0, None), Err(ConceptError::TooFewSamples { kappa: 4, rho: 2, n: 6 }));
        // one far outlier forms a singleton cluster
        let mut y = DMatrix::from_fn(6, 1, |i, _| i as f64 * 0.01);
        y[(5, 0)] = 100.0;
        assert!(matches!(prototypical_anchors(&y, 2, 2, 0, None), Err(ConceptError::EmptyCluster { size: 1, rho: 2, .. })));
        let bad = Prototypes { p: DMatrix::zeros(0, 1), anchor_sets: vec![vec![0, 1], vec![1]], assignment: vec![0; 6] };
        assert!(matches!(prototypical_anchors(&x, 1, 1, 0, Some(&bad)), Err(ConceptError::InvalidAnchors(_))));
    }

    #[test]
    fn psi_hook_applies_before_averaging() {
        let x = DMatrix::from_fn(4, 1, |i, _| i as f64);
        let given = Prototypes { p: DMatrix::zeros(0, 1), anchor_sets: vec![vec![0, 1, 2, 3]], assignment: vec![0; 4] };
        let squared = |b: &DMatrix<f64>| b.map(|v| v * v);
        let p = prototypical_anchors_with(&x, 1, 4, 0, Some(&given), &squared).unwrap();
        assert_eq!(p.p[(0, 0)], (0.0 + 1.0 + 4.0 + 9.0) / 4.0);
    }

    #[test]
    fn jaccard_closed_forms() {
        let a = [0, 1, 2, 0, 1, 2];
        assert_eq!(jaccard_matrix(&a, &a).unwrap().j, DMatrix::identity(3, 3));
        let j = jaccard_matrix(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap();
        assert_eq!(j.j, DMatrix::from_row_slice(1, 2, &[0.5, 0.5]));
        assert_eq!(jaccard_matrix(&[0], &[0, 1]), Err(ConceptError::LengthMismatch(1, 2)));
    }

    #[test]
    fn jaccard_matches_set_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let a: Vec<usize> = (0..30).map(|_| rng.random_range(0..4)).collect();
            let b: Vec<usize> = (0..30).map(|_| rng.random_range(0..5)).collect();
            assert_eq!(jaccard_matrix(&a, &b).unwrap().j, brute_force_jaccard(&a, &b));
        }
    }

    #[test]
    fn hungarian_small_cases() {
        let m = hungarian_match(&JaccardMatrix::from_matrix(DMatrix::identity(3, 3))).unwrap();
        assert!(m.pairs.iter().all(|p| p.a == p.b));
        assert_eq!(m.mean_similarity, Some(1.0));
        let j = JaccardMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.8, 0.2]));
        let m = hungarian_match(&j).unwrap();
        assert_eq!(m.pairs.iter().map(|p| (p.a, p.b)).collect::<Vec<_>>(), vec![(0, 0), (1, 1)]);
        assert!((m.total_similarity() - 1.1).abs() < 1e-15);
    }

    #[test]
    fn hungarian_exhaustive_five_by_five_grid() {
        let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let j = DMatrix::from_fn(5, 5, |_, _| grid[rng.random_range(0..grid.len())]);
            let m = hungarian_match(&JaccardMatrix::from_matrix(j.clone())).unwrap();
            assert_eq!(m.total_similarity(), brute_force_best(&j));
        }
    }

    #[test]
    fn hungarian_rectangular() {
        let j = DMatrix::from_row_slice(2, 3, &[0.1, 0.9, 0.3, 0.8, 0.7, 0.0]);
        let m = hungarian_match(&JaccardMatrix::from_matrix(j.clone())).unwrap();
        assert_eq!(m.pairs.len(), 2);
        assert!((m.total_similarity() - 1.7).abs() < 1e-12);
        assert!((m.total_similarity() - brute_force_best(&j)).abs() < 1e-12);
        assert!(hungarian_match(&JaccardMatrix::from_matrix(DMatrix::from_element(1, 1, f64::NAN))).is_err());
    }

    #[test]
    fn injected_groups_partition_samples() {
        let assign = [4, 0, 1, 2, 3, 0, 4, 4];
        let m = injected_match(&assign);
        assert_eq!(m.sample_groups.len(), 5);
        assert_eq!(m.sample_groups.iter().map(Vec::len).sum::<usize>(), assign.len());
        assert!(m.pairs.iter().all(|p| p.similarity == 1.0 && p.a == p.b));
        assert_eq!(m.sample_groups[4], vec![0, 6, 7]);
    }

    #[test]
    fn spectral_two_perfect_pairs() {
        let m = spectral_match(&JaccardMatrix::from_matrix(DMatrix::identity(2, 2)), 0).unwrap();
        assert_eq!(m.k_est, Some(2));
        // spectrum {0, 0, 2, 2}
        let expected = [0.0, 0.0, 2.0, 2.0];
        for (v, e) in m.eigenvalues.iter().zip(expected) {
            assert!((v - e).abs() < 1e-12);
        }
        assert_eq!(m.groups, vec![NodeGroup { a: vec![0], b: vec![0] }, NodeGroup { a: vec![1], b: vec![1] }]);
    }

    #[test]
    fn spectral_many_to_many_and_isolated() {
        // A0 links to B0 and B1, A1 to B2, A2 has no overlap
        let j = DMatrix::from_row_slice(3, 3, &[0.45, 0.45, 0.0, 0.0, 0.0, 0.9, 0.0, 0.0, 0.0]);
        let m = spectral_match(&JaccardMatrix::from_matrix(j), 7).unwrap();
        assert_eq!(m.k_est, Some(2));
        assert_eq!(
            m.groups,
            vec![
                NodeGroup { a: vec![0], b: vec![0, 1] },
                NodeGroup { a: vec![1], b: vec![2] },
                NodeGroup { a: vec![2], b: vec![] },
            ]
        );
        assert!(m.eigenvalues.iter().all(|&l| (-1e-12..=2.0 + 1e-12).contains(&l)));
    }

    #[test]
    fn gap_index_convention() {
        assert_eq!(spectral_gap_k(&[0.0, 2.0]), 1);
        assert_eq!(spectral_gap_k(&[0.0, 0.0, 2.0, 2.0]), 2);
        // equal gaps resolve to the smallest index
        assert_eq!(spectral_gap_k(&[0.0, 0.0, 1.0, 2.0, 2.0]), 2);
        assert_eq!(spectral_gap_k(&[0.0, 0.1, 0.2, 1.5]), 3);
    }

    #[test]
    fn matching_json_round_trip() {
        let m = spectral_match(&JaccardMatrix::from_matrix(DMatrix::identity(2, 2)), 0).unwrap();
        let back: Matching = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    fn block_diagonal(blocks: &[(usize, usize)], rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let ka: usize = blocks.iter().map(|b| b.0).sum();
        let kb: usize = blocks.iter().map(|b| b.1).sum();
        let mut j = DMatrix::zeros(ka, kb);
        let (mut r0, mut c0) = (0, 0);
        for &(r, c) in blocks {
            for i in 0..r {
                for t in 0..c {
                    j[(r0 + i, c0 + t)] = rng.random_range(0.5..1.0);
                }
            }
            r0 += r;
            c0 += c;
        }
        j
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hungarian_beats_every_permutation(k in 1usize..=6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let j = DMatrix::from_fn(k, k, |_, _| rng.random::<f64>());
            let m = hungarian_match(&JaccardMatrix::from_matrix(j.clone())).unwrap();
            prop_assert!((m.total_similarity() - brute_force_best(&j)).abs() < 1e-12);
        }

        #[test]
        fn jaccard_transpose_symmetry(a in prop::collection::vec(0usize..4, 1..40), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<usize> = a.iter().map(|_| rng.random_range(0..3)).collect();
            let ab = jaccard_matrix(&a, &b).unwrap().j;
            let ba = jaccard_matrix(&b, &a).unwrap().j;
            prop_assert_eq!(ab, ba.transpose());
        }

        #[test]
        fn spectral_recovers_perfect_blocks(c in 2usize..=4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let blocks: Vec<(usize, usize)> = (0..c).map(|_| (rng.random_range(1..=2), rng.random_range(1..=2))).collect();
            let j = block_diagonal(&blocks, &mut rng);
            let m = spectral_match(&JaccardMatrix::from_matrix(j), seed).unwrap();
            prop_assert_eq!(m.groups.len(), c);
            let (mut r0, mut c0) = (0, 0);
            let mut expected = Vec::new();
            for &(r, cc) in &blocks {
                expected.push(NodeGroup { a: (r0..r0 + r).collect(), b: (c0..c0 + cc).collect() });
                r0 += r;
                c0 += cc;
            }
            prop_assert_eq!(m.groups, expected);
        }

        #[test]
        fn prototypes_permutation_invariant(seed in any::<u64>(), shuffle in any::<u64>()) {
            let per = 15;
            let x = blobs(&[[0.0, 0.0], [30.0, 0.0], [0.0, 30.0]], per, 0.3, seed);
            let n = x.nrows();
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
            for i in (1..n).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let y = x.select_rows(&order);
            let px = prototypical_anchors(&x, 3, per, 11, None).unwrap();
            let py = prototypical_anchors(&y, 3, per, 11, None).unwrap();
            let sort_rows = |p: &DMatrix<f64>| {
                let mut rows: Vec<Vec<f64>> = p.row_iter().map(|r| r.iter().copied().collect()).collect();
                rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
                rows
            };
            for (a, b) in sort_rows(&px.p).iter().zip(sort_rows(&py.p)) {
                for (u, v) in a.iter().zip(b) {
                    prop_assert!((u - v).abs() < 1e-9);
                }
            }
        }
    }
}
