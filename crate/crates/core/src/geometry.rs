//! Embedding-geometry metrics and basis comparison (PCA, Laplacian eigenmaps).

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::graphs::{self, GraphError};
use crate::ingest::PairedClouds;
use crate::linalg::{self, serde_matrix, serde_vector};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("need at least 2 rows, got {0}")]
    DegenerateInput(usize),
    #[error("total variance is zero")]
    ZeroVariance,
    #[error("m={m} out of range 1..={max}")]
    MOutOfRange { m: usize, max: usize },
    #[error("basis was fitted on different samples than the pair")]
    IdMismatch,
    #[error("coefficient series {0} has zero variance")]
    ZeroVarianceCoefficient(String),
    #[error("input contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Share of variance that `k90` must reach.
pub const VARIANCE_TARGET: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub total_spread: f64,
    pub mean_dist_centroid: f64,
    pub std_dist_centroid: f64,
    pub density: f64,
    pub k90: usize,
    pub evr1: f64,
    pub evr3: f64,
    pub isotropy: f64,
    pub spectral_entropy: f64,
    pub effective_rank: f64,
    pub n: usize,
    pub d: usize,
}

impl GeometryReport {
    /// The ten metrics as `(name, value)` pairs in a fixed order.
    pub fn metric_rows(&self) -> [(&'static str, f64); 10] {
        [
            ("total_spread", self.total_spread),
            ("mean_dist_centroid", self.mean_dist_centroid),
            ("std_dist_centroid", self.std_dist_centroid),
            ("density", self.density),
            ("k90", self.k90 as f64),
            ("evr1", self.evr1),
            ("evr3", self.evr3),
            ("isotropy", self.isotropy),
            ("spectral_entropy", self.spectral_entropy),
            ("effective_rank", self.effective_rank),
        ]
    }
}

/// Singular values of the centered matrix, descending.
fn centered_singular_values(xc: &DMatrix<f64>) -> DVector<f64> {
    let mut s = SVD::new(xc.clone(), false, false).singular_values;
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn geometry_metrics(x: &DMatrix<f64>) -> Result<GeometryReport, GeometryError> {
    let (n, d) = (x.nrows(), x.ncols());
    if n < 2 {
        return Err(GeometryError::DegenerateInput(n));
    }
    if !linalg::all_finite(x) {
        return Err(GeometryError::NonFinite);
    }
    let mu = linalg::column_means(x);
    let xc = linalg::center(x, &mu);
    let nf = n as f64;

    let variances: Vec<f64> = xc.column_iter().map(|c| c.norm_squared() / (nf - 1.0)).collect();
    let total_spread: f64 = variances.iter().sum();
    if !(total_spread > 0.0) {
        return Err(GeometryError::ZeroVariance);
    }

    let dists: Vec<f64> = xc.row_iter().map(|r| r.norm()).collect();
    let mean_dist_centroid = dists.iter().sum::<f64>() / nf;
    let mean_sq = dists.iter().map(|v| v * v).sum::<f64>() / nf;
    let std_dist_centroid = (mean_sq - mean_dist_centroid * mean_dist_centroid).max(0.0).sqrt();

    let sigma = centered_singular_values(&xc);
    let tol = linalg::rank_tolerance(n, d, sigma[0]);
    let lambda: Vec<f64> = sigma.iter().map(|s| s * s / (nf - 1.0)).collect();
    let lambda_total: f64 = lambda.iter().sum();
    let mut cumulative = 0.0;
    let mut k90 = lambda.len();
    for (i, l) in lambda.iter().enumerate() {
        cumulative += l;
        if cumulative / lambda_total >= VARIANCE_TARGET {
            k90 = i + 1;
            break;
        }
    }
    let evr1 = lambda[0] / lambda_total;
    let evr3 = lambda.iter().take(3).sum::<f64>() / lambda_total;

    let vmax = variances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let vmin = variances.iter().copied().fold(f64::INFINITY, f64::min);

    // singular values at rounding level are exact zeros of the centered matrix
    let kept: Vec<f64> = sigma.iter().copied().filter(|&s| s > tol).collect();
    let sigma_sum: f64 = kept.iter().sum();
    let spectral_entropy = -kept.iter().map(|s| s / sigma_sum).map(|p| p * p.ln()).sum::<f64>();

    Ok(GeometryReport {
        total_spread,
        mean_dist_centroid,
        std_dist_centroid,
        density: nf / total_spread,
        k90,
        evr1,
        evr3,
        isotropy: vmin / vmax,
        spectral_entropy,
        effective_rank: spectral_entropy.exp(),
        n,
        d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Pca,
    LaplacianEigenmap,
}

/// `m` basis vectors as columns of `v`: PCA loadings (d × m) or eigenmap
/// vertex functions (n × m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    pub kind: BasisKind,
    #[serde(with = "serde_matrix")]
    pub v: DMatrix<f64>,
    #[serde(with = "serde_vector")]
    pub values: DVector<f64>,
    /// PCA only: the mean removed before projecting.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_vector")]
    pub mean: Option<DVector<f64>>,
    /// Sample ids the basis was fitted on, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<u32>>,
    /// Eigenmaps only: connected components of the kNN graph. More than one
    /// means extra near-zero eigenvalues precede the reported ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_components: Option<usize>,
}

mod opt_vector {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<DVector<f64>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().map(|x| x.as_slice().to_vec()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DVector<f64>>, D::Error> {
        Ok(Option::<Vec<f64>>::deserialize(d)?.map(DVector::from_vec))
    }
}

impl Basis {
    pub fn m(&self) -> usize {
        self.v.ncols()
    }

    pub fn with_ids(mut self, ids: Vec<u32>) -> Self {
        self.ids = Some(ids);
        self
    }

    pub fn is_disconnected(&self) -> bool {
        self.graph_components.is_some_and(|c| c > 1)
    }

    /// Per-sample series for each basis vector: PCA coefficients of the
    /// centered rows, or the eigenmap columns themselves.
    pub fn series(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, GeometryError> {
        match self.kind {
            BasisKind::Pca => {
                let mean = self.mean.as_ref().expect("PCA basis carries its mean");
                if x.ncols() != mean.len() {
                    return Err(GeometryError::IdMismatch);
                }
                Ok(linalg::center(x, mean) * &self.v)
            }
            BasisKind::LaplacianEigenmap => {
                if x.nrows() != self.v.nrows() {
                    return Err(GeometryError::IdMismatch);
                }
                Ok(self.v.clone())
            }
        }
    }
}

/// Flip each column so its largest-magnitude entry is positive; the first
/// such entry wins ties.
fn fix_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = (0.0f64, 0.0f64);
        for &x in col.iter() {
            if x.abs() > best.0 {
                best = (x.abs(), x);
            }
        }
        if best.1 < 0.0 {
            col.neg_mut();
        }
    }
}

/// Top-`m` eigenvectors of the sample covariance, eigenvalues descending.
pub fn pca_basis(x: &DMatrix<f64>, m: usize) -> Result<Basis, GeometryError> {
    let (n, d) = (x.nrows(), x.ncols());
    if n < 2 {
        return Err(GeometryError::DegenerateInput(n));
    }
    let max = (n - 1).min(d);
    if m == 0 || m > max {
        return Err(GeometryError::MOutOfRange { m, max });
    }
    let (mu, cov) = linalg::covariance(x);
    let (values, vectors) = linalg::sym_eigen_descending(&cov);
    let mut v = vectors.columns(0, m).into_owned();
    fix_signs(&mut v);
    Ok(Basis {
        kind: BasisKind::Pca,
        v,
        values: values.rows(0, m).into_owned(),
        mean: Some(mu),
        ids: None,
        graph_components: None,
    })
}

/// Eigenvectors of `I − D^{-1/2} A D^{-1/2}` on the union kNN graph for the
/// `m` smallest eigenvalues after the first.
///
/// A disconnected graph still yields a basis; `graph_components` records the
/// component count, and the leading returned eigenvalues are then ≈ 0.
pub fn laplacian_eigenmaps(x: &DMatrix<f64>, k_neighbors: usize, m: usize) -> Result<Basis, GeometryError> {
    let n = x.nrows();
    let g = graphs::knn_graph(x, k_neighbors)?;
    if m == 0 || m >= n {
        return Err(GeometryError::MOutOfRange { m, max: n.saturating_sub(1) });
    }
    let inv_sqrt: Vec<f64> = (0..n).map(|v| (g.degree(v) as f64).sqrt().recip()).collect();
    let mut lap = DMatrix::<f64>::identity(n, n);
    for (u, v) in g.edges() {
        let w = inv_sqrt[u] * inv_sqrt[v];
        lap[(u, v)] -= w;
        lap[(v, u)] -= w;
    }
    let (values, vectors) = linalg::sym_eigen_ascending(&lap);
    let mut v = vectors.columns(1, m).into_owned();
    fix_signs(&mut v);
    let (components, _) = g.components();
    Ok(Basis {
        kind: BasisKind::LaplacianEigenmap,
        v,
        values: values.rows(1, m).into_owned(),
        mean: None,
        ids: None,
        graph_components: Some(components),
    })
}

fn pearson_columns(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, GeometryError> {
    let standardize = |x: &DMatrix<f64>, side: &str| -> Result<DMatrix<f64>, GeometryError> {
        let mu = linalg::column_means(x);
        let mut c = linalg::center(x, &mu);
        for (j, mut col) in c.column_iter_mut().enumerate() {
            let norm = col.norm();
            if !(norm > 0.0) {
                return Err(GeometryError::ZeroVarianceCoefficient(format!("{side}[{j}]")));
            }
            col /= norm;
        }
        Ok(c)
    };
    let za = standardize(a, "a")?;
    let zb = standardize(b, "b")?;
    Ok((za.transpose() * zb).map(|r| r.clamp(-1.0, 1.0)))
}

/// Pearson correlation between every A-basis series and every B-basis series
/// over the paired samples.
pub fn basis_cross_correlation(a: &Basis, b: &Basis, pair: &PairedClouds) -> Result<DMatrix<f64>, GeometryError> {
    for (basis, cloud) in [(a, pair.a()), (b, pair.b())] {
        if basis.ids.as_deref().is_some_and(|ids| ids != cloud.ids()) {
            return Err(GeometryError::IdMismatch);
        }
    }
    let sa = a.series(pair.a().matrix())?;
    let sb = b.series(pair.b().matrix())?;
    pearson_columns(&sa, &sb)
}
