//! Cluster leverage and (bias-adjusted) residual cross-products.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::mean::{accumulate_score, all_terms, ClusterTerms};
use crate::correlation::{stacked_pairs, CorrelationParams};
use crate::data::TrialData;
use crate::error::{Result, SwgeeError};
use crate::linalg;
use crate::link::Link;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adjustment {
    /// Raw residual cross-products.
    Uee,
    /// Cross-products premultiplied by `(I - H1)^{-1}`.
    Maee,
}

impl std::str::FromStr for Adjustment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uee" => Ok(Adjustment::Uee),
            "maee" => Ok(Adjustment::Maee),
            other => Err(format!("unknown adjustment {other:?} (expected uee or maee)")),
        }
    }
}

/// Residual cross-products of one cluster together with the moments the
/// correlation updates need.
#[derive(Debug, Clone)]
pub struct CrossProducts {
    pub cluster: usize,
    pub periods: Vec<usize>,
    pub n: Vec<f64>,
    pub mu: Vec<f64>,
    pub mu_full: Vec<f64>,
    pub sizes_full: Vec<u64>,
    pub residual: DVector<f64>,
    /// Symmetric `m x m` matrix of `s_jl` (raw or adjusted).
    pub s: DMatrix<f64>,
}

impl CrossProducts {
    pub fn nu(&self) -> Vec<f64> {
        self.mu.iter().map(|m| m * (1.0 - m)).collect()
    }

    /// `S_i` stacked row-major over `j <= l`.
    pub fn stacked(&self) -> DVector<f64> {
        let pairs = stacked_pairs(self.periods.len());
        DVector::from_iterator(pairs.len(), pairs.iter().map(|&(a, b)| self.s[(a, b)]))
    }
}

/// `H1 = D1 Omega D1' V1^{-1}`.
pub fn cluster_leverage(terms: &ClusterTerms, omega: &DMatrix<f64>) -> DMatrix<f64> {
    &terms.d1 * omega * terms.d1.transpose() * &terms.cov.v1_inv
}

/// Symmetrized `(I - H1)^{-1} r r'`. Returns `None` when `I - H1` is singular.
pub fn adjusted_cross_products(residual: &DVector<f64>, h1: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let m = residual.len();
    let factor = DMatrix::identity(m, m) - h1;
    let outer = residual * residual.transpose();
    let lu = factor.lu();
    if !lu.is_invertible() {
        return None;
    }
    let a = lu.solve(&outer)?;
    if a.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(linalg::symmetrize(&a))
}

pub fn cross_products_from_terms(
    data: &TrialData,
    terms: &[ClusterTerms],
    omega: &DMatrix<f64>,
    adjustment: Adjustment,
) -> Result<(Vec<CrossProducts>, Vec<DMatrix<f64>>)> {
    let mut out = Vec::with_capacity(terms.len());
    let mut leverages = Vec::with_capacity(terms.len());
    for (cluster, t) in terms.iter().enumerate() {
        let h1 = cluster_leverage(t, omega);
        let s = match adjustment {
            Adjustment::Uee => &t.residual * t.residual.transpose(),
            Adjustment::Maee => adjusted_cross_products(&t.residual, &h1)
                .ok_or(SwgeeError::LeverageDegeneracy { cluster })?,
        };
        out.push(CrossProducts {
            cluster,
            periods: t.periods.clone(),
            n: t.n.clone(),
            mu: t.mu.iter().copied().collect(),
            mu_full: t.mu_full.clone(),
            sizes_full: data.sizes()[cluster].clone(),
            residual: t.residual.clone(),
            s,
        });
        leverages.push(h1);
    }
    Ok((out, leverages))
}

/// Per-cluster cross-products `S_i` (UEE) or `S~_i` (MAEE) and leverages
/// `H1_i` at `(theta, alpha)`.
pub fn residual_products(
    theta: &[f64],
    data: &TrialData,
    params: &CorrelationParams,
    link: Link,
    adjustment: Adjustment,
) -> Result<(Vec<CrossProducts>, Vec<DMatrix<f64>>)> {
    let terms = all_terms(data, theta, link, params)?;
    let score = accumulate_score(&terms, theta.len());
    let omega = linalg::information_inverse(&score.information, "mean")?;
    cross_products_from_terms(data, &terms, &omega, adjustment)
}
