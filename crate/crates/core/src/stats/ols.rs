use nalgebra::DMatrix;
use serde::Serialize;

use super::{dist, sample_sd, DesignMatrix, RegressionFit, Response, StatsError};
use crate::linalg;

/// 1 − h_ii below this is treated as leverage one.
pub const LEVERAGE_TOL: f64 = 1e-10;

pub(super) fn check_rank(x: &DMatrix<f64>) -> Result<(), StatsError> {
    let (n, p) = x.shape();
    let s = x.clone().svd(false, false).singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    let tol = linalg::rank_tolerance(n, p, smax);
    let rank = s.iter().filter(|&&v| v > tol).count();
    if rank < p {
        return Err(StatsError::RankDeficient { rank, p });
    }
    Ok(())
}

/// OLS coefficients with the HC3 sandwich covariance.
pub fn ols_hc3(dm: &DesignMatrix) -> Result<RegressionFit, StatsError> {
    let Response::Continuous(y) = &dm.y else {
        return Err(StatsError::WrongResponse("continuous"));
    };
    let (n, p) = dm.x.shape();
    if n <= p {
        return Err(StatsError::TooFewObservations { n, p });
    }
    check_rank(&dm.x)?;
    let x = &dm.x;
    let xtx = x.transpose() * x;
    // full rank was checked above, so failure here means severe ill-conditioning
    let bread = xtx.cholesky().ok_or(StatsError::RankDeficient { rank: p - 1, p })?.inverse();
    let beta = &bread * (x.transpose() * y);
    let e = y - x * &beta;

    let mut meat = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let xi = x.row(i);
        let h = (xi * &bread * xi.transpose())[(0, 0)];
        if 1.0 - h < LEVERAGE_TOL {
            return Err(StatsError::LeverageOne(i));
        }
        let w = e[i] * e[i] / ((1.0 - h) * (1.0 - h));
        meat += xi.transpose() * xi * w;
    }
    let cov = linalg::symmetrize(&bread * meat * &bread);
    let se = cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok(RegressionFit {
        beta_hat: beta.iter().copied().collect(),
        names: dm.names.clone(),
        cov_hc3: Some(cov),
        standard_errors: Some(se),
        standardized_beta: None,
        llf: None,
        llf_trace: Vec::new(),
        classes: Vec::new(),
        n,
        p,
    })
}

/// β̂ of `term` in units of the control-group standard deviation.
pub fn standardize_effect(fit: &RegressionFit, term: &str, control_values: &[f64]) -> Result<f64, StatsError> {
    let (beta, _) = fit.coefficient(term)?;
    let sd = sample_sd(control_values).filter(|&s| s > 0.0).ok_or(StatsError::ZeroControlVariance)?;
    Ok(beta / sd)
}

/// One row of forest-plot data: the standardized effect with its 95%
/// interval from HC3 standard errors, and a two-sided normal p-value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForestRow {
    pub condition: String,
    pub metric: String,
    pub standardized_beta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p: f64,
}

pub fn forest_row(
    fit: &RegressionFit,
    term: &str,
    control_values: &[f64],
    condition: &str,
    metric: &str,
) -> Result<ForestRow, StatsError> {
    let (beta, se) = fit.coefficient(term)?;
    let se = se.ok_or(StatsError::WrongResponse("continuous"))?;
    let sd = sample_sd(control_values).filter(|&s| s > 0.0).ok_or(StatsError::ZeroControlVariance)?;
    let p = if se > 0.0 { dist::normal_two_sided_p(beta / se) } else if beta == 0.0 { 1.0 } else { 0.0 };
    Ok(ForestRow {
        condition: condition.to_string(),
        metric: metric.to_string(),
        standardized_beta: beta / sd,
        ci_low: (beta - dist::Z_975 * se) / sd,
        ci_high: (beta + dist::Z_975 * se) / sd,
        p,
    })
}
