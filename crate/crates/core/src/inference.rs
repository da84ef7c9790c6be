//! Joint sandwich covariance of the mean and correlation estimates,
//! small-sample corrections, t intervals and the cluster-period CIC.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::correlation::stacked_pairs;
use crate::data::TrialData;
use crate::engine::leverage::{adjusted_cross_products, cluster_leverage};
use crate::engine::mean::{accumulate_score, all_terms, ClusterTerms};
use crate::engine::{Adjustment, FitResult};
use crate::error::{Result, SwgeeError};
use crate::linalg;

/// Cap on the BC3 leverage statistic; `(1 - 0.75)^{-1/2} = 2`.
pub const ZETA: f64 = 0.75;
const EIGEN_FLOOR: f64 = 1e-10;
const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Correction {
    BC0,
    BC1,
    BC2,
    BC3,
}

impl Correction {
    pub const ALL: [Correction; 4] = [Correction::BC0, Correction::BC1, Correction::BC2, Correction::BC3];

    pub fn name(self) -> &'static str {
        match self {
            Correction::BC0 => "BC0",
            Correction::BC1 => "BC1",
            Correction::BC2 => "BC2",
            Correction::BC3 => "BC3",
        }
    }
}

impl std::str::FromStr for Correction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().trim_start_matches("BC") {
            "0" => Ok(Correction::BC0),
            "1" => Ok(Correction::BC1),
            "2" => Ok(Correction::BC2),
            "3" => Ok(Correction::BC3),
            _ => Err(format!("unknown correction {s:?} (expected 0-3 or BC0-BC3)")),
        }
    }
}

/// Everything the sandwich needs, evaluated once at the fitted values.
struct Pieces {
    terms: Vec<ClusterTerms>,
    omega: DMatrix<f64>,
    p: DMatrix<f64>,
    /// Reparameterized `D2` per cluster.
    d2: Vec<DMatrix<f64>>,
    h1: Vec<DMatrix<f64>>,
    h2: Vec<DMatrix<f64>>,
    /// `S~ - eta` (or `S - eta`) per cluster.
    cov_residual: Vec<DVector<f64>>,
    q: DMatrix<f64>,
}

/// `d S_i / d theta^T` for the stacked raw cross-products.
fn cross_product_jacobian(t: &ClusterTerms) -> DMatrix<f64> {
    let pairs = stacked_pairs(t.periods.len());
    let p = t.d1.ncols();
    DMatrix::from_fn(pairs.len(), p, |row, c| {
        let (a, b) = pairs[row];
        -t.d1[(a, c)] * t.residual[b] - t.residual[a] * t.d1[(b, c)]
    })
}

fn stack(m: &DMatrix<f64>) -> DVector<f64> {
    let pairs = stacked_pairs(m.nrows());
    DVector::from_iterator(pairs.len(), pairs.iter().map(|&(a, b)| m[(a, b)]))
}

fn pieces(fit: &FitResult, data: &TrialData, strict_uee: bool) -> Result<Pieces> {
    let terms = all_terms(data, &fit.theta, fit.spec.link, &fit.alpha)?;
    let score = accumulate_score(&terms, fit.theta.len());
    let omega = linalg::information_inverse(&score.information, "mean")?;
    let transform = fit.spec.transform();
    let d2: Vec<DMatrix<f64>> = terms.iter().map(|t| &t.cov.d2 * &transform).collect();
    let p = crate::engine::correlation_information_inverse(&terms, &transform)?;
    let qdim = transform.ncols();

    let mut h1 = Vec::with_capacity(terms.len());
    let mut h2 = Vec::with_capacity(terms.len());
    let mut cov_residual = Vec::with_capacity(terms.len());
    let mut dsum = DMatrix::zeros(qdim, fit.theta.len());
    for (cluster, (t, d2i)) in terms.iter().zip(&d2).enumerate() {
        let h = cluster_leverage(t, &omega);
        let outer = &t.residual * t.residual.transpose();
        let s = if strict_uee && fit.spec.adjustment == Adjustment::Uee {
            outer
        } else {
            adjusted_cross_products(&t.residual, &h).ok_or(SwgeeError::LeverageDegeneracy { cluster })?
        };
        cov_residual.push(stack(&s) - &t.cov.eta);
        dsum += d2i.transpose() * cross_product_jacobian(t);
        h2.push(d2i * &p * d2i.transpose());
        h1.push(h);
    }
    let q = &p * dsum * &omega;
    Ok(Pieces { terms, omega, p, d2, h1, h2, cov_residual, q })
}

/// `diag{(1 - min(zeta, a_jj b_jj))^{-1/2}}`.
pub fn bc3_factor(a: &DMatrix<f64>, b: &DMatrix<f64>, zeta: f64) -> DMatrix<f64> {
    let d = DVector::from_fn(a.nrows(), |j, _| (1.0 - zeta.min(a[(j, j)] * b[(j, j)])).powf(-0.5));
    DMatrix::from_diagonal(&d)
}

fn b_factor(h: &DMatrix<f64>, correction: Correction, cluster: usize) -> Result<DMatrix<f64>> {
    let m = h.nrows();
    let factor = DMatrix::identity(m, m) - h;
    match correction {
        Correction::BC0 | Correction::BC3 => Ok(DMatrix::identity(m, m)),
        Correction::BC1 => Ok(linalg::inv_sqrt_symmetric(&factor, EIGEN_FLOOR)),
        Correction::BC2 => {
            linalg::inverse(&factor).ok_or(SwgeeError::LeverageDegeneracy { cluster })
        }
    }
}

/// Joint covariance of `(theta, alpha)` under one correction.
fn joint(pc: &Pieces, correction: Correction) -> Result<DMatrix<f64>> {
    let p = pc.omega.nrows();
    let q = pc.p.nrows();
    let mut lambda = DMatrix::zeros(p + q, p + q);
    for (i, t) in pc.terms.iter().enumerate() {
        let b1 = b_factor(&pc.h1[i], correction, i)?;
        let b2 = b_factor(&pc.h2[i], correction, i)?;
        let mut u = t.d1.transpose() * &t.cov.v1_inv * (b1 * &t.residual);
        let mut w = pc.d2[i].transpose() * (b2 * &pc.cov_residual[i]);
        if correction == Correction::BC3 {
            let info1 = t.d1.transpose() * &t.cov.v1_inv * &t.d1;
            u = bc3_factor(&info1, &pc.omega, ZETA) * u;
            let info2 = pc.d2[i].transpose() * &pc.d2[i];
            w = bc3_factor(&info2, &pc.p, ZETA) * w;
        }
        let mut g = DVector::zeros(p + q);
        g.rows_mut(0, p).copy_from(&u);
        g.rows_mut(p, q).copy_from(&w);
        lambda += &g * g.transpose();
    }
    let mut m = DMatrix::zeros(p + q, p + q);
    m.view_mut((0, 0), (p, p)).copy_from(&pc.omega);
    m.view_mut((p, 0), (q, p)).copy_from(&pc.q);
    m.view_mut((p, p), (q, q)).copy_from(&pc.p);
    let cov = linalg::symmetrize(&(&m * lambda * m.transpose()));
    let scale = linalg::max_abs(&cov).max(1.0);
    let min = linalg::min_eigenvalue(&cov);
    if min < -PSD_TOLERANCE * scale {
        return Err(SwgeeError::Numerical(format!(
            "{} covariance is not positive semidefinite (min eigenvalue {min:e})",
            correction.name()
        )));
    }
    Ok(cov)
}

/// Expands the covariance of free correlation parameters to the full
/// parameter vector when the fit was constrained.
fn expand(cov: DMatrix<f64>, p: usize, transform: &DMatrix<f64>) -> DMatrix<f64> {
    let full = p + transform.nrows();
    if cov.nrows() == full {
        return cov;
    }
    let mut e = DMatrix::zeros(full, cov.nrows());
    e.view_mut((0, 0), (p, p)).fill_with_identity();
    e.view_mut((p, p), transform.shape()).copy_from(transform);
    &e * cov * e.transpose()
}

#[derive(Debug, Clone)]
pub struct SandwichSet {
    /// Model-based covariance of `theta`.
    pub model_based: DMatrix<f64>,
    /// Joint `(theta, alpha)` covariance per correction.
    pub joint: Vec<(Correction, DMatrix<f64>)>,
    pub zeta: (f64, f64),
}

impl SandwichSet {
    pub fn get(&self, correction: Correction) -> Option<&DMatrix<f64>> {
        self.joint.iter().find(|(c, _)| *c == correction).map(|(_, m)| m)
    }
}

/// Joint covariance under one correction. `strict_uee` uses raw residual
/// products in the correlation block of a UEE fit instead of the adjusted
/// ones.
pub fn sandwich(
    fit: &FitResult,
    data: &TrialData,
    correction: Correction,
    strict_uee: bool,
) -> Result<DMatrix<f64>> {
    let pc = pieces(fit, data, strict_uee)?;
    Ok(expand(joint(&pc, correction)?, fit.theta.len(), &fit.spec.transform()))
}

pub fn sandwich_set(
    fit: &FitResult,
    data: &TrialData,
    corrections: &[Correction],
    strict_uee: bool,
) -> Result<SandwichSet> {
    let pc = pieces(fit, data, strict_uee)?;
    let transform = fit.spec.transform();
    let joint = corrections
        .iter()
        .map(|&c| Ok((c, expand(joint(&pc, c)?, fit.theta.len(), &transform))))
        .collect::<Result<Vec<_>>>()?;
    Ok(SandwichSet { model_based: pc.omega, joint, zeta: (ZETA, ZETA) })
}

/// `Omega = (sum D1' V1^{-1} D1)^{-1}`.
pub fn model_based(fit: &FitResult, data: &TrialData) -> Result<DMatrix<f64>> {
    let terms = all_terms(data, &fit.theta, fit.spec.link, &fit.alpha)?;
    linalg::information_inverse(&accumulate_score(&terms, fit.theta.len()).information, "mean")
}

pub fn parameter_names(fit: &FitResult) -> Vec<String> {
    let j = fit.theta.len() - 1;
    (1..=j)
        .map(|k| format!("beta{k}"))
        .chain(std::iter::once("delta".to_string()))
        .chain(fit.alpha.structure().param_names().iter().map(|s| s.to_string()))
        .collect()
}

pub fn estimates(fit: &FitResult) -> Vec<f64> {
    fit.theta.iter().copied().chain(fit.alpha.values()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub df: usize,
    pub confidence: f64,
    pub quantile: f64,
    pub intervals: Vec<Interval>,
}

/// Two-sided `t_{df}` quantile for the given confidence.
pub fn t_quantile(df: usize, confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(SwgeeError::InvalidConfig(format!("confidence {confidence} not in (0, 1)")));
    }
    let t = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| SwgeeError::DegreesOfFreedom(e.to_string()))?;
    Ok(t.inverse_cdf(0.5 + confidence / 2.0))
}

/// `estimate -/+ t_{I-2} se` for every parameter covered by `cov` (the
/// leading block when `cov` is the model-based `theta` covariance).
pub fn intervals(
    fit: &FitResult,
    n_clusters: usize,
    cov: &DMatrix<f64>,
    confidence: f64,
) -> Result<IntervalReport> {
    if n_clusters <= 2 {
        return Err(SwgeeError::DegreesOfFreedom(format!(
            "t intervals need I >= 3 clusters, got {n_clusters}"
        )));
    }
    let df = n_clusters - 2;
    let quantile = t_quantile(df, confidence)?;
    let names = parameter_names(fit);
    let est = estimates(fit);
    let intervals = (0..cov.nrows().min(est.len()))
        .map(|k| {
            let se = cov[(k, k)].max(0.0).sqrt();
            Interval {
                name: names[k].clone(),
                estimate: est[k],
                se,
                lower: est[k] - quantile * se,
                upper: est[k] + quantile * se,
            }
        })
        .collect();
    Ok(IntervalReport { df, confidence, quantile, intervals })
}

/// `trace[(sum D1' Psi^{-1} D1) Cov_BC1(theta)]` with `Psi` the working
/// independence covariance of the cluster-period means.
pub fn cic_cp(fit: &FitResult, data: &TrialData) -> Result<f64> {
    let cov = sandwich(fit, data, Correction::BC1, false)?;
    let p = fit.theta.len();
    let terms = all_terms(data, &fit.theta, fit.spec.link, &fit.alpha)?;
    Ok(cic_from(&terms, &cov.view((0, 0), (p, p)).into_owned()))
}

fn cic_from(terms: &[ClusterTerms], theta_cov: &DMatrix<f64>) -> f64 {
    let p = theta_cov.nrows();
    let mut info = DMatrix::zeros(p, p);
    for t in terms {
        let nu = t.nu();
        let w = DVector::from_iterator(nu.len(), nu.iter().zip(&t.n).map(|(v, n)| n / v));
        let scaled = DMatrix::from_diagonal(&w) * &t.d1;
        info += t.d1.transpose() * scaled;
    }
    (info * theta_cov).trace()
}
