//! Alignment operators between two paired latent spaces.
//!
//! All maps act on row vectors. PPFE and Linear run inside whitened
//! coordinates (`prewhiten_A → operator → dewhiten_B`); CCA centers raw
//! embeddings itself and never touches the whiteners.
//!
//! PPFE frames are stored as `F_T ∈ ℝ^{d_A×κ}` and `F_R ∈ ℝ^{d_B×κ}` with
//! orthonormal columns, and a whitened row `ã` is sent to `ã F_T F_Rᵀ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::concepts::{self, ConceptError};
use crate::ingest::{IngestError, PairedClouds, PointCloud};
use crate::linalg::{self, serde_matrix, serde_vector};
use crate::whiten::{self, WhitenError, WhitenModel};

/// Bumped whenever the serialized layout of [`AlignmentMap`] changes.
pub const FORMAT_VERSION: u32 = 1;

/// Eigenvalue floor for Gram and covariance inverse square roots.
pub const EIGEN_FLOOR: f64 = 1e-6;

/// Clustering re-runs allowed after an undersized cluster.
pub const PPFE_RETRIES: u32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum AlignError {
    #[error("k={k} out of range 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("rho must be positive")]
    BadRho,
    #[error("every clustering attempt left a cluster smaller than rho: {0}")]
    EmptyCluster(ConceptError),
    #[error("anchor Gram matrix is numerically singular (smallest eigenvalue {min_eigenvalue:e})")]
    RankDeficientAnchors { min_eigenvalue: f64 },
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("need at least 2 paired rows, got {0}")]
    TooFewRows(usize),
    #[error("expected {expected} columns, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("map has format version {found}, this build reads version {FORMAT_VERSION}")]
    UnsupportedVersion { found: u32 },
    #[error("operation needs a {expected} map, got {found}")]
    WrongMethod { expected: Method, found: Method },
    #[error(transparent)]
    Whiten(#[from] WhitenError),
    #[error(transparent)]
    Concept(#[from] ConceptError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ppfe,
    Linear,
    Cca,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ppfe, Method::Linear, Method::Cca];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ppfe => "ppfe",
            Method::Linear => "linear",
            Method::Cca => "cca",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ppfe" | "proto" => Ok(Method::Ppfe),
            "linear" => Ok(Method::Linear),
            "cca" => Ok(Method::Cca),
            other => Err(format!("unknown alignment method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Operator {
    Ppfe {
        whiten_a: WhitenModel,
        whiten_b: WhitenModel,
        #[serde(with = "serde_matrix")]
        f_t: DMatrix<f64>,
        #[serde(with = "serde_matrix")]
        f_r: DMatrix<f64>,
        anchor_sets: Vec<Vec<usize>>,
    },
    /// Thin SVD `A = U Σ Vᵀ` of the full whitened least-squares map
    /// (`d_B × d_A`); the map's `k` selects how many triplets are applied.
    Linear {
        whiten_a: WhitenModel,
        whiten_b: WhitenModel,
        #[serde(with = "serde_matrix")]
        u: DMatrix<f64>,
        #[serde(with = "serde_vector")]
        s: DVector<f64>,
        #[serde(with = "serde_matrix")]
        v: DMatrix<f64>,
        rank: usize,
    },
    Cca {
        #[serde(with = "serde_matrix")]
        w_a: DMatrix<f64>,
        #[serde(with = "serde_matrix")]
        w_b: DMatrix<f64>,
        #[serde(with = "serde_matrix")]
        w_b_pinv: DMatrix<f64>,
        #[serde(with = "serde_vector")]
        mu_a: DVector<f64>,
        #[serde(with = "serde_vector")]
        mu_b: DVector<f64>,
        /// All canonical correlations, non-increasing.
        #[serde(with = "serde_vector")]
        correlations: DVector<f64>,
    },
}

/// A fitted map from source (A) rows to target (B) rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMap {
    pub version: u32,
    pub k: usize,
    pub dim_a: usize,
    pub dim_b: usize,
    pub source_model: String,
    pub target_model: String,
    pub operator: Operator,
}

impl AlignmentMap {
    pub fn method(&self) -> Method {
        match self.operator {
            Operator::Ppfe { .. } => Method::Ppfe,
            Operator::Linear { .. } => Method::Linear,
            Operator::Cca { .. } => Method::Cca,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("alignment map serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, AlignError> {
        let m: AlignmentMap = serde_json::from_str(text)?;
        if m.version != FORMAT_VERSION {
            return Err(AlignError::UnsupportedVersion { found: m.version });
        }
        Ok(m)
    }

    /// The whitened-space operator as a `d_B × d_A` matrix (PPFE, Linear).
    pub fn whitened_operator(&self) -> Option<DMatrix<f64>> {
        match &self.operator {
            Operator::Ppfe { f_t, f_r, .. } => Some(f_r * f_t.transpose()),
            Operator::Linear { u, s, v, .. } => Some(low_rank(u, s, v, self.k)),
            Operator::Cca { .. } => None,
        }
    }

    /// Apply the full pipeline to raw source rows.
    pub fn transmit_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, AlignError> {
        if x.ncols() != self.dim_a {
            return Err(AlignError::DimensionMismatch { expected: self.dim_a, found: x.ncols() });
        }
        match &self.operator {
            Operator::Ppfe { whiten_a, whiten_b, f_t, f_r, .. } => {
                let a = whiten::prewhiten(whiten_a, x)?;
                let b = (a * f_t) * f_r.transpose();
                Ok(whiten::dewhiten(whiten_b, &b)?)
            }
            Operator::Linear { whiten_a, whiten_b, u, s, v, .. } => {
                let k = self.k;
                let a = whiten::prewhiten(whiten_a, x)?;
                let mut coeff = a * v.columns(0, k);
                for (j, mut col) in coeff.column_iter_mut().enumerate() {
                    col *= s[j];
                }
                let b = coeff * u.columns(0, k).transpose();
                Ok(whiten::dewhiten(whiten_b, &b)?)
            }
            Operator::Cca { w_a, w_b_pinv, mu_a, mu_b, .. } => {
                let z = linalg::center(x, mu_a) * w_a;
                Ok(linalg::uncenter(&(z * w_b_pinv), mu_b))
            }
        }
    }
}

fn low_rank(u: &DMatrix<f64>, s: &DVector<f64>, v: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut us = u.columns(0, k).into_owned();
    for (j, mut col) in us.column_iter_mut().enumerate() {
        col *= s[j];
    }
    us * v.columns(0, k).transpose()
}

fn check_pair(pair: &PairedClouds) -> Result<(&DMatrix<f64>, &DMatrix<f64>), AlignError> {
    let (a, b) = (pair.a().matrix(), pair.b().matrix());
    if a.nrows() < 2 {
        return Err(AlignError::TooFewRows(a.nrows()));
    }
    if !linalg::all_finite(a) || !linalg::all_finite(b) {
        return Err(AlignError::NonFiniteInput);
    }
    Ok((a, b))
}

fn frame_of(p: &DMatrix<f64>) -> Result<DMatrix<f64>, AlignError> {
    let gram = p * p.transpose();
    let (inv_sqrt, min_eigenvalue) = linalg::inv_sqrt_psd(&gram, EIGEN_FLOOR);
    if !(min_eigenvalue > EIGEN_FLOOR) {
        return Err(AlignError::RankDeficientAnchors { min_eigenvalue });
    }
    Ok(p.transpose() * inv_sqrt)
}

/// Prototype-frame map with `kappa` anchors of `rho` samples each.
///
/// Prototypes come from the prewhitened A side; the B side reuses A's anchor
/// index sets. An undersized cluster triggers up to [`PPFE_RETRIES`] re-runs
/// with derived seeds. A Gram matrix with an eigenvalue at or below
/// [`EIGEN_FLOOR`] is rejected, which forces `kappa ≤ min(d_A, d_B)`.
pub fn fit_ppfe(pair: &PairedClouds, kappa: usize, rho: usize, seed: u64) -> Result<AlignmentMap, AlignError> {
    let (a, b) = check_pair(pair)?;
    let max = a.ncols().min(b.ncols());
    if kappa == 0 || kappa > max {
        return Err(AlignError::KOutOfRange { k: kappa, max });
    }
    if rho == 0 {
        return Err(AlignError::BadRho);
    }
    let whiten_a = whiten::fit_whitener(a, whiten::DEFAULT_EPSILON)?;
    let whiten_b = whiten::fit_whitener(b, whiten::DEFAULT_EPSILON)?;
    let wa = whiten::prewhiten(&whiten_a, a)?;
    let wb = whiten::prewhiten(&whiten_b, b)?;

    let mut attempt_seed = seed;
    let mut attempt = 0;
    let protos_a = loop {
        match concepts::prototypical_anchors(&wa, kappa, rho, attempt_seed, None) {
            Ok(p) => break p,
            Err(e @ ConceptError::EmptyCluster { .. }) => {
                if attempt == PPFE_RETRIES {
                    return Err(AlignError::EmptyCluster(e));
                }
                attempt += 1;
                attempt_seed = retry_seed(seed, attempt);
            }
            Err(e) => return Err(e.into()),
        }
    };
    let protos_b = concepts::prototypical_anchors(&wb, kappa, rho, attempt_seed, Some(&protos_a))?;

    let f_t = frame_of(&protos_a.p)?;
    let f_r = frame_of(&protos_b.p)?;
    Ok(AlignmentMap {
        version: FORMAT_VERSION,
        k: kappa,
        dim_a: a.ncols(),
        dim_b: b.ncols(),
        source_model: pair.a().model_name().to_string(),
        target_model: pair.b().model_name().to_string(),
        operator: Operator::Ppfe { whiten_a, whiten_b, f_t, f_r, anchor_sets: protos_a.anchor_sets },
    })
}

/// SplitMix64 step, so retries do not walk adjacent seeds.
fn retry_seed(seed: u64, attempt: u32) -> u64 {
    let mut z = seed.wrapping_add(u64::from(attempt).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Full-rank least-squares map in whitened coordinates, `k = rank`.
pub fn fit_linear(pair: &PairedClouds) -> Result<AlignmentMap, AlignError> {
    let (a, b) = check_pair(pair)?;
    let whiten_a = whiten::fit_whitener(a, whiten::DEFAULT_EPSILON)?;
    let whiten_b = whiten::fit_whitener(b, whiten::DEFAULT_EPSILON)?;
    let wa = whiten::prewhiten(&whiten_a, a)?;
    let wb = whiten::prewhiten(&whiten_b, b)?;
    // rows-as-samples form of A = Z_B Z_A†
    let op = (linalg::pinv(&wa) * wb).transpose();
    let svd = linalg::thin_svd(&op);
    let smax = svd.s.iter().copied().fold(0.0, f64::max);
    let tol = linalg::rank_tolerance(op.nrows(), op.ncols(), smax);
    let rank = svd.s.iter().filter(|&&s| s > tol).count();
    if rank == 0 {
        return Err(AlignError::KOutOfRange { k: 1, max: 0 });
    }
    Ok(AlignmentMap {
        version: FORMAT_VERSION,
        k: rank,
        dim_a: a.ncols(),
        dim_b: b.ncols(),
        source_model: pair.a().model_name().to_string(),
        target_model: pair.b().model_name().to_string(),
        operator: Operator::Linear { whiten_a, whiten_b, u: svd.u, s: svd.s, v: svd.v, rank },
    })
}

/// Keep the top `k` singular triplets of a linear map.
pub fn truncate_linear(m: &AlignmentMap, k: usize) -> Result<AlignmentMap, AlignError> {
    let Operator::Linear { rank, .. } = &m.operator else {
        return Err(AlignError::WrongMethod { expected: Method::Linear, found: m.method() });
    };
    if k == 0 || k > *rank {
        return Err(AlignError::KOutOfRange { k, max: *rank });
    }
    let mut out = m.clone();
    out.k = k;
    Ok(out)
}

/// `‖A − A_k‖_F = (Σ_{i>k} σ_i²)^{1/2}` for a linear map.
pub fn truncation_error(m: &AlignmentMap) -> Option<f64> {
    match &m.operator {
        Operator::Linear { s, .. } => Some(s.iter().skip(m.k).map(|x| x * x).sum::<f64>().sqrt()),
        _ => None,
    }
}

/// CCA quantities shared by every `k`.
#[derive(Debug, Clone)]
pub struct CcaSolution {
    s_aa_inv_sqrt: DMatrix<f64>,
    s_bb_inv_sqrt: DMatrix<f64>,
    svd: linalg::ThinSvd,
    mu_a: DVector<f64>,
    mu_b: DVector<f64>,
    source_model: String,
    target_model: String,
}

impl CcaSolution {
    pub fn fit(pair: &PairedClouds, epsilon: f64) -> Result<Self, AlignError> {
        let (a, b) = check_pair(pair)?;
        if !(epsilon > 0.0) {
            return Err(WhitenError::BadEpsilon(epsilon).into());
        }
        let n = a.nrows() as f64;
        let mu_a = linalg::column_means(a);
        let mu_b = linalg::column_means(b);
        let xc = linalg::center(a, &mu_a);
        let yc = linalg::center(b, &mu_b);
        let mut s_aa = linalg::symmetrize(xc.transpose() * &xc / (n - 1.0));
        let mut s_bb = linalg::symmetrize(yc.transpose() * &yc / (n - 1.0));
        for m in [&mut s_aa, &mut s_bb] {
            for i in 0..m.nrows() {
                m[(i, i)] += epsilon;
            }
        }
        let s_ab = xc.transpose() * &yc / (n - 1.0);
        let (s_aa_inv_sqrt, _) = linalg::inv_sqrt_psd(&s_aa, EIGEN_FLOOR.min(epsilon));
        let (s_bb_inv_sqrt, _) = linalg::inv_sqrt_psd(&s_bb, EIGEN_FLOOR.min(epsilon));
        let t = &s_aa_inv_sqrt * s_ab * &s_bb_inv_sqrt;
        let svd = linalg::thin_svd(&t);
        Ok(CcaSolution {
            s_aa_inv_sqrt,
            s_bb_inv_sqrt,
            svd,
            mu_a,
            mu_b,
            source_model: pair.a().model_name().to_string(),
            target_model: pair.b().model_name().to_string(),
        })
    }

    pub fn correlations(&self) -> &DVector<f64> {
        &self.svd.s
    }

    pub fn max_k(&self) -> usize {
        self.svd.s.len()
    }

    pub fn map(&self, k: usize) -> Result<AlignmentMap, AlignError> {
        if k == 0 || k > self.max_k() {
            return Err(AlignError::KOutOfRange { k, max: self.max_k() });
        }
        let w_a = &self.s_aa_inv_sqrt * self.svd.u.columns(0, k);
        let w_b = &self.s_bb_inv_sqrt * self.svd.v.columns(0, k);
        let w_b_pinv = linalg::pinv(&w_b);
        Ok(AlignmentMap {
            version: FORMAT_VERSION,
            k,
            dim_a: self.mu_a.len(),
            dim_b: self.mu_b.len(),
            source_model: self.source_model.clone(),
            target_model: self.target_model.clone(),
            operator: Operator::Cca {
                w_a,
                w_b,
                w_b_pinv,
                mu_a: self.mu_a.clone(),
                mu_b: self.mu_b.clone(),
                correlations: self.svd.s.clone(),
            },
        })
    }
}

/// CCA map with `k` canonical directions on raw embeddings.
pub fn fit_cca(pair: &PairedClouds, k: usize, epsilon: f64) -> Result<AlignmentMap, AlignError> {
    let (a, b) = check_pair(pair)?;
    let max = a.ncols().min(b.ncols());
    if k == 0 || k > max {
        return Err(AlignError::KOutOfRange { k, max });
    }
    CcaSolution::fit(pair, epsilon)?.map(k)
}

/// Transmit a source cloud; ids and labels carry over, the model name
/// becomes the map's target model.
pub fn transmit(m: &AlignmentMap, a_test: &PointCloud) -> Result<PointCloud, AlignError> {
    let out = m.transmit_matrix(a_test.matrix())?;
    Ok(a_test.with_matrix(m.target_model.clone(), out)?)
}
