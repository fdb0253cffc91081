//! Cholesky prewhitening and dewhitening.
//!
//! Fitting stores the column mean `mu` and the lower Cholesky factor `L` of
//! `C = Xcᵀ Xc / (n-1) + εI`. Prewhitening maps rows to `(x - mu) L⁻ᵀ`,
//! dewhitening maps them back with `z Lᵀ + mu`. `L⁻¹` is never formed; both
//! directions use triangular solves or products.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{self, serde_matrix, serde_vector};

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WhitenError {
    #[error("need at least 2 rows to estimate a covariance, got {0}")]
    DegenerateInput(usize),
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("Cholesky factorization failed (non-finite input?)")]
    CholeskyFailure,
    #[error("expected {expected} columns, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitenModel {
    #[serde(with = "serde_vector")]
    mu: DVector<f64>,
    /// Lower-triangular, positive diagonal.
    #[serde(with = "serde_matrix")]
    l: DMatrix<f64>,
    epsilon: f64,
}

impl WhitenModel {
    pub fn mean(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn check(&self, x: &DMatrix<f64>) -> Result<(), WhitenError> {
        if x.ncols() != self.dim() {
            return Err(WhitenError::DimensionMismatch { expected: self.dim(), found: x.ncols() });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("whitener serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub fn fit_whitener(x: &DMatrix<f64>, epsilon: f64) -> Result<WhitenModel, WhitenError> {
    if x.nrows() < 2 {
        return Err(WhitenError::DegenerateInput(x.nrows()));
    }
    if !(epsilon > 0.0) {
        return Err(WhitenError::BadEpsilon(epsilon));
    }
    if !linalg::all_finite(x) {
        return Err(WhitenError::CholeskyFailure);
    }
    let (mu, mut cov) = linalg::covariance(x);
    for i in 0..cov.nrows() {
        cov[(i, i)] += epsilon;
    }
    let chol = Cholesky::new(cov).ok_or(WhitenError::CholeskyFailure)?;
    Ok(WhitenModel { mu, l: chol.l(), epsilon })
}

/// `(X - 1 muᵀ) L⁻ᵀ`, computed as the transpose of `L⁻¹ Xcᵀ`.
pub fn prewhiten(m: &WhitenModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>, WhitenError> {
    m.check(x)?;
    let xc_t = linalg::center(x, &m.mu).transpose();
    let solved = m.l.solve_lower_triangular(&xc_t).ok_or(WhitenError::CholeskyFailure)?;
    Ok(solved.transpose())
}

/// `Z Lᵀ + 1 muᵀ`.
pub fn dewhiten(m: &WhitenModel, z: &DMatrix<f64>) -> Result<DMatrix<f64>, WhitenError> {
    m.check(z)?;
    let lifted = z * m.l.transpose();
    Ok(linalg::uncenter(&lifted, &m.mu))
}
