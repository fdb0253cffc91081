//! Dense linear-algebra helpers shared by the numeric modules.
//!
//! Everything here works on `f64` matrices in row-per-sample layout.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

/// Relative cutoff used by [`pinv`]: singular values below
/// `max(rows, cols) * sigma_max * PINV_RTOL` are treated as zero.
pub const PINV_RTOL: f64 = 1e-12;

/// Column means of a row-per-sample matrix.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Subtract `mu` from every row.
pub fn center(x: &DMatrix<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mu[j]);
    }
    out
}

/// Add `mu` to every row.
pub fn uncenter(x: &DMatrix<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(mu[j]);
    }
    out
}

/// Sample covariance with the (n-1) divisor. Returns `(mean, covariance)`.
pub fn covariance(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mu = column_means(x);
    let xc = center(x, &mu);
    let denom = (x.nrows() as f64 - 1.0).max(1.0);
    let cov = xc.tr_mul(&xc) / denom;
    (mu, symmetrize(cov))
}

/// `(m + mᵀ) / 2`, removing round-off asymmetry before an eigensolve.
pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending and
/// eigenvectors permuted to match (column `i` pairs with value `i`).
pub fn sym_eigen_ascending(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m.clone()));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(m.nrows(), order.len());
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Symmetric eigendecomposition, eigenvalues sorted descending.
pub fn sym_eigen_descending(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (values, vectors) = sym_eigen_ascending(m);
    let d = values.len();
    let rev_values = DVector::from_iterator(d, values.iter().rev().copied());
    let mut rev_vectors = DMatrix::zeros(vectors.nrows(), d);
    for j in 0..d {
        rev_vectors.set_column(j, &vectors.column(d - 1 - j));
    }
    (rev_values, rev_vectors)
}

/// Inverse square root of a symmetric PSD matrix. Eigenvalues are floored
/// at `floor` before inversion. Also returns the smallest raw eigenvalue.
pub fn inv_sqrt_psd(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, f64) {
    let (values, vectors) = sym_eigen_ascending(m);
    let min_raw = values.iter().copied().fold(f64::INFINITY, f64::min);
    let scaled = DVector::from_iterator(values.len(), values.iter().map(|&v| 1.0 / v.max(floor).sqrt()));
    let mut left = vectors.clone();
    for (j, mut col) in left.column_iter_mut().enumerate() {
        col *= scaled[j];
    }
    (symmetrize(left * vectors.transpose()), min_raw)
}

/// Thin SVD with singular values in descending order.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn thin_svd(m: &DMatrix<f64>) -> ThinSvd {
    let svd = SVD::new(m.clone(), true, true);
    ThinSvd {
        u: svd.u.expect("requested U"),
        s: svd.singular_values,
        v: svd.v_t.expect("requested Vt").transpose(),
    }
}

/// Tolerance below which a singular value counts as zero.
pub fn rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * PINV_RTOL
}

/// Moore-Penrose pseudo-inverse.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let ThinSvd { u, s, v } = thin_svd(m);
    let smax = s.iter().copied().fold(0.0, f64::max);
    let tol = rank_tolerance(m.nrows(), m.ncols(), smax);
    let mut vs = v;
    for (j, mut col) in vs.column_iter_mut().enumerate() {
        let sj = s[j];
        if sj > tol {
            col /= sj;
        } else {
            col.fill(0.0);
        }
    }
    vs * u.transpose()
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Max absolute entry of `m - I`.
pub fn max_abs_dev_from_identity(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((m[(i, j)] - target).abs());
        }
    }
    worst
}

/// Row-major serializable matrix container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixBlob {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixBlob {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            data.extend(m.row(i).iter().copied());
        }
        MatrixBlob { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl MatrixBlob {
    pub fn to_matrix(&self) -> Option<DMatrix<f64>> {
        (self.data.len() == self.rows * self.cols)
            .then(|| DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Serde adapter storing a `DMatrix<f64>` as a [`MatrixBlob`].
pub mod serde_matrix {
    use super::MatrixBlob;
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        MatrixBlob::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let blob = MatrixBlob::deserialize(d)?;
        blob.to_matrix()
            .ok_or_else(|| D::Error::custom("matrix data length does not match rows*cols"))
    }
}

/// Serde adapter storing a `DVector<f64>` as a plain list.
pub mod serde_vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let data = Vec::<f64>::deserialize(d)?;
        Ok(DVector::from_vec(data))
    }
}
