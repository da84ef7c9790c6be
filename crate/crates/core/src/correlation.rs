//! Induced covariance of cluster-period means.
//!
//! An individual-level correlation model (within-period ICC `alpha0` plus a
//! between-period rule) induces a `J x J` covariance `V1` for the vector of
//! cluster-period means. The distinct entries of `V1` stacked row-major over
//! `j <= l` form `eta`; `D2` is its Jacobian in the correlation parameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SwgeeError};
use crate::linalg;

/// Upper bound on `sum_j n_ij` for dense individual-level expansion.
pub const INDIVIDUAL_GUARD: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    Independence,
    Exchangeable,
    NestedExchangeable,
    ExponentialDecay,
}

impl Structure {
    /// Number of correlation parameters.
    pub fn dim(self) -> usize {
        match self {
            Structure::Independence => 0,
            Structure::Exchangeable => 1,
            Structure::NestedExchangeable | Structure::ExponentialDecay => 2,
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Structure::Independence => &[],
            Structure::Exchangeable => &["alpha0"],
            Structure::NestedExchangeable => &["alpha0", "alpha1"],
            Structure::ExponentialDecay => &["alpha0", "rho"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Structure::Independence => "independence",
            Structure::Exchangeable => "exchangeable",
            Structure::NestedExchangeable => "nested-exchangeable",
            Structure::ExponentialDecay => "exponential-decay",
        }
    }
}

impl std::str::FromStr for Structure {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "independence" | "ind" => Ok(Structure::Independence),
            "exchangeable" | "exch" => Ok(Structure::Exchangeable),
            "nested-exchangeable" | "nested-exch" | "ne" => Ok(Structure::NestedExchangeable),
            "exponential-decay" | "exp-decay" | "ed" => Ok(Structure::ExponentialDecay),
            other => Err(format!(
                "unknown correlation structure {other:?} (expected independence, exch, nested-exch or exp-decay)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "structure", rename_all = "kebab-case")]
pub enum CorrelationParams {
    Independence,
    Exchangeable { alpha0: f64 },
    NestedExchangeable { alpha0: f64, alpha1: f64 },
    ExponentialDecay { alpha0: f64, rho: f64 },
}

impl CorrelationParams {
    pub fn structure(&self) -> Structure {
        match self {
            CorrelationParams::Independence => Structure::Independence,
            CorrelationParams::Exchangeable { .. } => Structure::Exchangeable,
            CorrelationParams::NestedExchangeable { .. } => Structure::NestedExchangeable,
            CorrelationParams::ExponentialDecay { .. } => Structure::ExponentialDecay,
        }
    }

    pub fn alpha0(&self) -> f64 {
        match *self {
            CorrelationParams::Independence => 0.0,
            CorrelationParams::Exchangeable { alpha0 }
            | CorrelationParams::NestedExchangeable { alpha0, .. }
            | CorrelationParams::ExponentialDecay { alpha0, .. } => alpha0,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match *self {
            CorrelationParams::Independence => vec![],
            CorrelationParams::Exchangeable { alpha0 } => vec![alpha0],
            CorrelationParams::NestedExchangeable { alpha0, alpha1 } => vec![alpha0, alpha1],
            CorrelationParams::ExponentialDecay { alpha0, rho } => vec![alpha0, rho],
        }
    }

    pub fn from_values(structure: Structure, values: &[f64]) -> Result<Self> {
        if values.len() != structure.dim() {
            return Err(SwgeeError::InvalidConfig(format!(
                "{} takes {} parameters, got {}",
                structure.name(),
                structure.dim(),
                values.len()
            )));
        }
        Ok(match structure {
            Structure::Independence => CorrelationParams::Independence,
            Structure::Exchangeable => CorrelationParams::Exchangeable { alpha0: values[0] },
            Structure::NestedExchangeable => {
                CorrelationParams::NestedExchangeable { alpha0: values[0], alpha1: values[1] }
            }
            Structure::ExponentialDecay => {
                CorrelationParams::ExponentialDecay { alpha0: values[0], rho: values[1] }
            }
        })
    }

    /// Correlation between two individuals of the same cluster in distinct
    /// periods `j != l`.
    pub fn between(&self, j: usize, l: usize) -> f64 {
        match *self {
            CorrelationParams::Independence => 0.0,
            CorrelationParams::Exchangeable { alpha0 } => alpha0,
            CorrelationParams::NestedExchangeable { alpha1, .. } => alpha1,
            CorrelationParams::ExponentialDecay { alpha0, rho } => alpha0 * rho.powi(lag(j, l)),
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.values().iter().any(|v| !v.is_finite()) {
            return Err(infeasible("non-finite correlation parameter"));
        }
        if let CorrelationParams::ExponentialDecay { rho, .. } = *self {
            if !(0.0..=1.0).contains(&rho) {
                return Err(infeasible(&format!("decay rho = {rho} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn infeasible(message: &str) -> SwgeeError {
    SwgeeError::InfeasibleParameters { cluster: None, message: message.to_string() }
}

fn lag(j: usize, l: usize) -> i32 {
    j.abs_diff(l) as i32
}

/// Row-major `(a, b)` index pairs with `a <= b` over `m` observed periods.
pub fn stacked_pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|a| (a..m).map(move |b| (a, b))).collect()
}

/// Induced covariance for one cluster.
#[derive(Debug, Clone)]
pub struct ClusterCovariance {
    /// Observed period indices (`n_ij >= 1`), ascending.
    pub periods: Vec<usize>,
    pub v1: DMatrix<f64>,
    pub v1_inv: DMatrix<f64>,
    pub eta: DVector<f64>,
    pub d2: DMatrix<f64>,
}

struct Moments {
    periods: Vec<usize>,
    n: Vec<f64>,
    nu: Vec<f64>,
}

fn moments(mu: &[f64], sizes: &[u64]) -> Result<Moments> {
    if mu.len() != sizes.len() {
        return Err(SwgeeError::InvalidConfig("mean and size vectors differ in length".into()));
    }
    let periods: Vec<usize> = (0..sizes.len()).filter(|&p| sizes[p] > 0).collect();
    for &p in &periods {
        if !(mu[p] > 0.0 && mu[p] < 1.0) {
            return Err(SwgeeError::VarianceDegeneracy { period: p, mean: mu[p] });
        }
    }
    let n = periods.iter().map(|&p| sizes[p] as f64).collect();
    let nu = periods.iter().map(|&p| mu[p] * (1.0 - mu[p])).collect();
    Ok(Moments { periods, n, nu })
}

fn v1_matrix(m: &Moments, params: &CorrelationParams) -> DMatrix<f64> {
    let k = m.periods.len();
    let a0 = params.alpha0();
    DMatrix::from_fn(k, k, |a, b| {
        if a == b {
            m.nu[a] / m.n[a] * (1.0 + (m.n[a] - 1.0) * a0)
        } else {
            (m.nu[a] * m.nu[b]).sqrt() * params.between(m.periods[a], m.periods[b])
        }
    })
}

fn d2_matrix(m: &Moments, params: &CorrelationParams) -> DMatrix<f64> {
    let pairs = stacked_pairs(m.periods.len());
    let q = params.structure().dim();
    let mut d2 = DMatrix::zeros(pairs.len(), q);
    for (row, &(a, b)) in pairs.iter().enumerate() {
        let root = (m.nu[a] * m.nu[b]).sqrt();
        match *params {
            CorrelationParams::Independence => {}
            CorrelationParams::Exchangeable { .. } => {
                d2[(row, 0)] = if a == b { m.nu[a] * (m.n[a] - 1.0) / m.n[a] } else { root };
            }
            CorrelationParams::NestedExchangeable { .. } => {
                if a == b {
                    d2[(row, 0)] = m.nu[a] * (m.n[a] - 1.0) / m.n[a];
                } else {
                    d2[(row, 1)] = root;
                }
            }
            CorrelationParams::ExponentialDecay { alpha0, rho } => {
                if a == b {
                    d2[(row, 0)] = m.nu[a] * (m.n[a] - 1.0) / m.n[a];
                } else {
                    let d = lag(m.periods[a], m.periods[b]);
                    d2[(row, 0)] = root * rho.powi(d);
                    d2[(row, 1)] = root * alpha0 * f64::from(d) * rho.powi(d - 1);
                }
            }
        }
    }
    d2
}

/// `V1`, its inverse, `eta` and `D2` for one cluster. `mu` and `sizes` span all
/// `J` periods; periods with `n = 0` are dropped.
pub fn induced_covariance(
    mu: &[f64],
    sizes: &[u64],
    params: &CorrelationParams,
) -> Result<ClusterCovariance> {
    params.check()?;
    let m = moments(mu, sizes)?;
    let v1 = v1_matrix(&m, params);
    let v1_inv = linalg::spd_inverse(&v1)
        .ok_or_else(|| infeasible("induced cluster-period covariance is not positive definite"))?;
    let pairs = stacked_pairs(m.periods.len());
    let eta = DVector::from_iterator(pairs.len(), pairs.iter().map(|&(a, b)| v1[(a, b)]));
    let d2 = d2_matrix(&m, params);
    Ok(ClusterCovariance { periods: m.periods, v1, v1_inv, eta, d2 })
}

/// `D2 = d eta / d alpha^T` without forming or checking `V1`.
pub fn covariance_jacobian(
    mu: &[f64],
    sizes: &[u64],
    params: &CorrelationParams,
) -> Result<DMatrix<f64>> {
    params.check()?;
    Ok(d2_matrix(&moments(mu, sizes)?, params))
}

/// `eta` alone, without the positive-definiteness check.
pub fn stacked_covariance(
    mu: &[f64],
    sizes: &[u64],
    params: &CorrelationParams,
) -> Result<DVector<f64>> {
    let m = moments(mu, sizes)?;
    let v1 = v1_matrix(&m, params);
    let pairs = stacked_pairs(m.periods.len());
    Ok(DVector::from_iterator(pairs.len(), pairs.iter().map(|&(a, b)| v1[(a, b)])))
}

/// Correlation between cluster-period means `j` and `l` as all `n_ij -> inf`.
pub fn limit_correlation(params: &CorrelationParams, j: usize, l: usize) -> Result<f64> {
    let a0 = params.alpha0();
    if a0 == 0.0 {
        return Err(SwgeeError::UndefinedLimit);
    }
    if j == l {
        return Ok(1.0);
    }
    Ok(match *params {
        CorrelationParams::ExponentialDecay { rho, .. } => rho.powi(lag(j, l)),
        _ => params.between(j, l) / a0,
    })
}

/// Individual-level quantities for one cluster.
#[derive(Debug, Clone)]
pub struct IndividualExpansion {
    /// `N_i x dim(theta)` Jacobian of the individual means.
    pub e1: DMatrix<f64>,
    /// `N_i x N_i` individual covariance.
    pub m1: DMatrix<f64>,
    pub vartheta: DVector<f64>,
    /// Period index of every individual row.
    pub period_of: Vec<usize>,
}

fn individual_count(sizes: &[u64]) -> Result<usize> {
    let total: u64 = sizes.iter().sum();
    let total = usize::try_from(total).unwrap_or(usize::MAX);
    if total > INDIVIDUAL_GUARD {
        return Err(SwgeeError::OracleScale { size: total, limit: INDIVIDUAL_GUARD });
    }
    Ok(total)
}

/// Materializes the individual-level mean vector, Jacobian and covariance of
/// one cluster. `d1` holds one row of `d mu_ij / d theta^T` per period.
pub fn expand_individual(
    sizes: &[u64],
    mu: &[f64],
    d1: &DMatrix<f64>,
    params: &CorrelationParams,
) -> Result<IndividualExpansion> {
    params.check()?;
    let total = individual_count(sizes)?;
    if d1.nrows() != sizes.len() {
        return Err(SwgeeError::InvalidConfig("D1 needs one row per period".into()));
    }
    let m = moments(mu, sizes)?;
    let period_of: Vec<usize> =
        m.periods.iter().flat_map(|&p| std::iter::repeat(p).take(sizes[p] as usize)).collect();
    debug_assert_eq!(period_of.len(), total);
    let nu_of = |p: usize| mu[p] * (1.0 - mu[p]);
    let a0 = params.alpha0();
    let m1 = DMatrix::from_fn(total, total, |r, c| {
        let (j, l) = (period_of[r], period_of[c]);
        if r == c {
            nu_of(j)
        } else if j == l {
            nu_of(j) * a0
        } else {
            (nu_of(j) * nu_of(l)).sqrt() * params.between(j, l)
        }
    });
    let e1 = DMatrix::from_fn(total, d1.ncols(), |r, c| d1[(period_of[r], c)]);
    let vartheta = DVector::from_iterator(total, period_of.iter().map(|&p| mu[p]));
    Ok(IndividualExpansion { e1, m1, vartheta, period_of })
}

/// Individual-level correlation matrix of one cluster, individuals ordered by
/// period.
pub fn individual_correlation(sizes: &[u64], params: &CorrelationParams) -> Result<DMatrix<f64>> {
    let total = individual_count(sizes)?;
    let period_of: Vec<usize> = (0..sizes.len())
        .flat_map(|p| std::iter::repeat(p).take(sizes[p] as usize))
        .collect();
    let a0 = params.alpha0();
    Ok(DMatrix::from_fn(total, total, |r, c| {
        let (j, l) = (period_of[r], period_of[c]);
        if r == c {
            1.0
        } else if j == l {
            a0
        } else {
            params.between(j, l)
        }
    }))
}
