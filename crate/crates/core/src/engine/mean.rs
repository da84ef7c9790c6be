//! Marginal mean model terms and the cluster-period quasi-score.

use nalgebra::{DMatrix, DVector};

use crate::correlation::{induced_covariance, ClusterCovariance, CorrelationParams};
use crate::data::TrialData;
use crate::error::{Result, SwgeeError};
use crate::link::Link;

/// Clamping band applied to fitted means before variance evaluation.
pub const MU_EPSILON: f64 = 1e-10;

/// Means `mu_ij` for every period of one cluster, clamped into
/// `[eps, 1 - eps]`, and the `J x (J + 1)` Jacobian `d mu / d theta^T`.
pub fn cluster_mean(theta: &[f64], link: Link, treatment: &[u8]) -> (Vec<f64>, DMatrix<f64>, bool) {
    let j = treatment.len();
    debug_assert_eq!(theta.len(), j + 1);
    let delta = theta[j];
    let mut clamped = false;
    let mu: Vec<f64> = (0..j)
        .map(|p| {
            let raw = link.inverse(theta[p] + f64::from(treatment[p]) * delta);
            let c = raw.clamp(MU_EPSILON, 1.0 - MU_EPSILON);
            // NaN compares false; treat it as clamped too
            if c != raw {
                clamped = true;
            }
            if c.is_nan() {
                0.5
            } else {
                c
            }
        })
        .collect();
    let d1 = DMatrix::from_fn(j, j + 1, |r, c| {
        let deriv = link.mu_eta(mu[r]);
        if c == j {
            deriv * f64::from(treatment[r])
        } else if c == r {
            deriv
        } else {
            0.0
        }
    });
    (mu, d1, clamped)
}

/// Everything the estimating equations need from one cluster, restricted to
/// its observed periods.
#[derive(Debug, Clone)]
pub struct ClusterTerms {
    pub periods: Vec<usize>,
    pub n: Vec<f64>,
    pub ybar: DVector<f64>,
    pub mu: DVector<f64>,
    /// Fitted means over all `J` periods.
    pub mu_full: Vec<f64>,
    /// `m x (J + 1)` rows of `d mu / d theta^T` for the observed periods.
    pub d1: DMatrix<f64>,
    pub cov: ClusterCovariance,
    pub residual: DVector<f64>,
    pub clamped: bool,
}

impl ClusterTerms {
    pub fn nu(&self) -> Vec<f64> {
        self.mu.iter().map(|m| m * (1.0 - m)).collect()
    }
}

pub fn cluster_terms(
    data: &TrialData,
    cluster: usize,
    theta: &[f64],
    link: Link,
    params: &CorrelationParams,
) -> Result<ClusterTerms> {
    let (mu_full, d1_full, clamped) = cluster_mean(theta, link, &data.treatment()[cluster]);
    let sizes = &data.sizes()[cluster];
    let cov = induced_covariance(&mu_full, sizes, params).map_err(|e| match e {
        SwgeeError::InfeasibleParameters { message, .. } => {
            SwgeeError::InfeasibleParameters { cluster: Some(cluster), message }
        }
        other => other,
    })?;
    let periods = cov.periods.clone();
    let m = periods.len();
    let n: Vec<f64> = periods.iter().map(|&p| sizes[p] as f64).collect();
    let ybar = DVector::from_iterator(
        m,
        periods.iter().map(|&p| data.total(cluster, p) as f64 / sizes[p] as f64),
    );
    let mu = DVector::from_iterator(m, periods.iter().map(|&p| mu_full[p]));
    let d1 = DMatrix::from_fn(m, theta.len(), |r, c| d1_full[(periods[r], c)]);
    let residual = &ybar - &mu;
    Ok(ClusterTerms { periods, n, ybar, mu, mu_full, d1, cov, residual, clamped })
}

pub fn all_terms(
    data: &TrialData,
    theta: &[f64],
    link: Link,
    params: &CorrelationParams,
) -> Result<Vec<ClusterTerms>> {
    (0..data.n_clusters()).map(|c| cluster_terms(data, c, theta, link, params)).collect()
}

/// Quasi-score `U1 = sum D1' V1^{-1} (Ybar - mu)` and information
/// `sum D1' V1^{-1} D1`.
#[derive(Debug, Clone)]
pub struct MeanScore {
    pub score: DVector<f64>,
    pub information: DMatrix<f64>,
    pub clamped: bool,
}

impl MeanScore {
    pub fn norm(&self) -> f64 {
        self.score.norm()
    }
}

pub fn accumulate_score(terms: &[ClusterTerms], p: usize) -> MeanScore {
    let mut score = DVector::zeros(p);
    let mut information = DMatrix::zeros(p, p);
    let mut clamped = false;
    for t in terms {
        let w = t.d1.transpose() * &t.cov.v1_inv;
        score += &w * &t.residual;
        information += &w * &t.d1;
        clamped |= t.clamped;
    }
    MeanScore { score, information, clamped }
}

pub fn mean_score(
    theta: &[f64],
    params: &CorrelationParams,
    data: &TrialData,
    link: Link,
) -> Result<MeanScore> {
    if theta.len() != data.n_periods() + 1 {
        return Err(SwgeeError::InvalidConfig(format!(
            "theta has {} entries, expected J + 1 = {}",
            theta.len(),
            data.n_periods() + 1
        )));
    }
    let terms = all_terms(data, theta, link, params)?;
    Ok(accumulate_score(&terms, theta.len()))
}
