//! Pooled OLS with HC3 errors, control-sd effect sizes, multinomial logit and
//! likelihood-ratio tests.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

pub mod dist;
mod mnlogit;
mod ols;

pub use mnlogit::{mnlogit_fit, MnlogitOptions};
pub use ols::{forest_row, ols_hc3, standardize_effect, ForestRow};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("design matrix has rank {rank} < {p} columns")]
    RankDeficient { rank: usize, p: usize },
    #[error("need more observations ({n}) than parameters ({p})")]
    TooFewObservations { n: usize, p: usize },
    #[error("observation {0} has leverage 1; its HC3 term is undefined")]
    LeverageOne(usize),
    #[error("control values have zero variance or fewer than 2 observations")]
    ZeroControlVariance,
    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("perfect separation: coefficients diverge")]
    PerfectSeparation,
    #[error("df must be positive for nested models")]
    NotNested,
    #[error("likelihood-ratio statistic {0} is negative: the optimizer failed")]
    NegativeLR(f64),
    #[error("column '{name}' has {got} values, expected {expected}")]
    LengthMismatch { name: String, expected: usize, got: usize },
    #[error("unknown term '{0}'")]
    UnknownTerm(String),
    #[error("response must be {0}")]
    WrongResponse(&'static str),
    #[error("need at least 2 classes")]
    SingleClass,
    #[error("fit has no log-likelihood")]
    NoLikelihood,
    #[error("input contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Continuous(DVector<f64>),
    Classes(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub y: Response,
    pub names: Vec<String>,
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// The same design without the named columns (for nested models).
    pub fn without(&self, names: &[&str]) -> DesignMatrix {
        let keep: Vec<usize> = (0..self.p()).filter(|&j| !names.contains(&self.names[j].as_str())).collect();
        DesignMatrix {
            x: self.x.select_columns(&keep),
            y: self.y.clone(),
            names: keep.iter().map(|&j| self.names[j].clone()).collect(),
        }
    }
}

/// Column-by-column construction of a design matrix.
#[derive(Debug, Clone)]
pub struct DesignBuilder {
    n: usize,
    columns: Vec<Vec<f64>>,
    names: Vec<String>,
}

pub const INTERCEPT: &str = "intercept";

impl DesignBuilder {
    /// Starts with an intercept column.
    pub fn new(n: usize) -> Self {
        DesignBuilder { n, columns: vec![vec![1.0; n]], names: vec![INTERCEPT.to_string()] }
    }

    pub fn without_intercept(n: usize) -> Self {
        DesignBuilder { n, columns: Vec::new(), names: Vec::new() }
    }

    fn check_len(&self, name: &str, got: usize) -> Result<(), StatsError> {
        if got != self.n {
            return Err(StatsError::LengthMismatch { name: name.to_string(), expected: self.n, got });
        }
        Ok(())
    }

    pub fn numeric(mut self, name: &str, values: &[f64]) -> Result<Self, StatsError> {
        self.check_len(name, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        self.columns.push(values.to_vec());
        self.names.push(name.to_string());
        Ok(self)
    }

    /// Dummy columns `name[level]` for every level except the alphabetically
    /// first, which is the reference.
    pub fn categorical<S: AsRef<str>>(mut self, name: &str, values: &[S]) -> Result<Self, StatsError> {
        self.check_len(name, values.len())?;
        let levels: BTreeSet<&str> = values.iter().map(AsRef::as_ref).collect();
        for level in levels.into_iter().skip(1) {
            self.columns.push(values.iter().map(|v| if v.as_ref() == level { 1.0 } else { 0.0 }).collect());
            self.names.push(format!("{name}[{level}]"));
        }
        Ok(self)
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.columns.len(), |i, j| self.columns[j][i])
    }

    pub fn continuous(self, y: &[f64]) -> Result<DesignMatrix, StatsError> {
        self.check_len("y", y.len())?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        Ok(DesignMatrix { x: self.matrix(), y: Response::Continuous(DVector::from_column_slice(y)), names: self.names })
    }

    pub fn classes<S: AsRef<str>>(self, y: &[S]) -> Result<DesignMatrix, StatsError> {
        self.check_len("y", y.len())?;
        let y = y.iter().map(|s| s.as_ref().to_string()).collect();
        Ok(DesignMatrix { x: self.matrix(), y: Response::Classes(y), names: self.names })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionFit {
    /// OLS: one coefficient per column. Logit: column-major `p × (K−1)`,
    /// one block per non-reference class.
    pub beta_hat: Vec<f64>,
    pub names: Vec<String>,
    /// OLS only.
    #[serde(skip)]
    pub cov_hc3: Option<DMatrix<f64>>,
    pub standard_errors: Option<Vec<f64>>,
    /// Set by [`standardize_effect`] callers that keep the scaled value.
    pub standardized_beta: Option<f64>,
    /// Logit only.
    pub llf: Option<f64>,
    /// Logit only: log-likelihood after each accepted iteration.
    pub llf_trace: Vec<f64>,
    /// Logit only: sorted class labels, reference first.
    pub classes: Vec<String>,
    pub n: usize,
    pub p: usize,
}

impl RegressionFit {
    pub fn coefficient(&self, name: &str) -> Result<(f64, Option<f64>), StatsError> {
        let j = self.names.iter().position(|n| n == name).ok_or_else(|| StatsError::UnknownTerm(name.to_string()))?;
        Ok((self.beta_hat[j], self.standard_errors.as_ref().map(|se| se[j])))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LRTest {
    pub variable: String,
    pub lr_stat: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Slack for tiny negative statistics caused by optimizer tolerance.
pub const LR_NEGATIVE_SLACK: f64 = 1e-8;

pub fn lr_test(variable: &str, full: &RegressionFit, reduced: &RegressionFit, df: i64) -> Result<LRTest, StatsError> {
    if df <= 0 {
        return Err(StatsError::NotNested);
    }
    let (Some(lf), Some(lr)) = (full.llf, reduced.llf) else {
        return Err(StatsError::NoLikelihood);
    };
    let raw = 2.0 * (lf - lr);
    if raw < -LR_NEGATIVE_SLACK {
        return Err(StatsError::NegativeLR(raw));
    }
    let lr_stat = raw.max(0.0);
    Ok(LRTest { variable: variable.to_string(), lr_stat, df: df as usize, p_value: dist::chi2_sf(lr_stat, df as usize) })
}

/// Sample standard deviation with the n − 1 divisor.
pub fn sample_sd(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}
