//! Correlation-parameter updates from the covariance estimating equations
//! with identity working weight.

use nalgebra::{DMatrix, DVector};

use super::leverage::CrossProducts;
use crate::correlation::{covariance_jacobian, stacked_covariance, CorrelationParams, Structure};
use crate::error::{Result, SwgeeError};
use crate::linalg;
use crate::roots::{roots_in_interval, Polynomial};

pub const ED_INNER_TOLERANCE: f64 = 1e-10;
pub const ED_INNER_MAX: usize = 100;
const ROOT_GRID: usize = 400;

/// Within-period part shared by every structure: with `d = nu (n - 1) / n`,
/// `num = sum d (s_jj - nu / n)` and `den = sum d^2`.
#[derive(Debug, Clone, Copy, Default)]
struct WithinSums {
    num: f64,
    den: f64,
    informative: usize,
}

fn within_sums(cross: &[CrossProducts]) -> WithinSums {
    let mut w = WithinSums::default();
    for c in cross {
        let nu = c.nu();
        for a in 0..c.periods.len() {
            let n = c.n[a];
            let d = nu[a] * (n - 1.0) / n;
            w.num += d * (c.s[(a, a)] - nu[a] / n);
            w.den += d * d;
            if n >= 2.0 {
                w.informative += 1;
            }
        }
    }
    w
}

/// Between-period sums by lag: `a[d] = sum s_jl sqrt(nu_j nu_l)` and
/// `b[d] = sum nu_j nu_l` over unordered pairs with `|j - l| = d`.
#[derive(Debug, Clone, Default)]
struct LagSums {
    a: Vec<f64>,
    b: Vec<f64>,
    pairs: usize,
}

fn lag_sums(cross: &[CrossProducts]) -> LagSums {
    let max_lag = cross
        .iter()
        .filter_map(|c| Some(c.periods.last()? - c.periods.first()?))
        .max()
        .unwrap_or(0);
    let mut s = LagSums { a: vec![0.0; max_lag + 1], b: vec![0.0; max_lag + 1], pairs: 0 };
    for c in cross {
        let nu = c.nu();
        let m = c.periods.len();
        for a in 0..m {
            for b in a + 1..m {
                let d = c.periods[b] - c.periods[a];
                s.a[d] += c.s[(a, b)] * (nu[a] * nu[b]).sqrt();
                s.b[d] += nu[a] * nu[b];
                s.pairs += 1;
            }
        }
    }
    s
}

fn require_within(w: &WithinSums) -> Result<()> {
    if w.informative == 0 || w.den <= 0.0 {
        return Err(SwgeeError::Unidentified(
            "alpha0 needs at least one cluster-period with n >= 2".into(),
        ));
    }
    Ok(())
}

fn require_between(l: &LagSums) -> Result<()> {
    if l.pairs == 0 {
        return Err(SwgeeError::Unidentified(
            "between-period correlation needs a cluster observed in at least two periods".into(),
        ));
    }
    Ok(())
}

/// Closed-form nested exchangeable update `(alpha0, alpha1)`.
pub fn ne_update(cross: &[CrossProducts]) -> Result<(f64, f64)> {
    let w = within_sums(cross);
    require_within(&w)?;
    let l = lag_sums(cross);
    require_between(&l)?;
    let alpha0 = w.num / w.den;
    let alpha1 = l.a.iter().sum::<f64>() / l.b.iter().sum::<f64>();
    Ok((alpha0, alpha1))
}

/// Closed-form simple exchangeable update.
pub fn exchangeable_update(cross: &[CrossProducts]) -> Result<f64> {
    let w = within_sums(cross);
    require_within(&w)?;
    let l = lag_sums(cross);
    Ok((w.num + l.a.iter().sum::<f64>()) / (w.den + l.b.iter().sum::<f64>()))
}

/// Least-squares update for structures linear in the correlation parameters
/// under the reparameterization `alpha = T phi`. Returns `phi`.
pub fn linear_update(
    cross: &[CrossProducts],
    structure: Structure,
    transform: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if !matches!(structure, Structure::Exchangeable | Structure::NestedExchangeable) {
        return Err(SwgeeError::InvalidConfig(format!(
            "{} is not linear in its parameters",
            structure.name()
        )));
    }
    let zero = CorrelationParams::from_values(structure, &vec![0.0; structure.dim()])?;
    let q = transform.ncols();
    let mut lhs = DMatrix::zeros(q, q);
    let mut rhs = DVector::zeros(q);
    for c in cross {
        let d2 = covariance_jacobian(&c.mu_full, &c.sizes_full, &zero)? * transform;
        let offset = stacked_covariance(&c.mu_full, &c.sizes_full, &zero)?;
        lhs += d2.transpose() * &d2;
        rhs += d2.transpose() * (c.stacked() - offset);
    }
    let inv = linalg::spd_inverse(&lhs)
        .ok_or_else(|| SwgeeError::Unidentified("correlation design is singular".into()))?;
    Ok(inv * rhs)
}

/// Stacked covariance estimating function `sum D2' (S - eta(alpha))` with
/// identity working weight, optionally reparameterized by `transform`.
pub fn covariance_equation(
    cross: &[CrossProducts],
    params: &CorrelationParams,
    transform: Option<&DMatrix<f64>>,
) -> Result<DVector<f64>> {
    let q = transform.map_or(params.structure().dim(), |t| t.ncols());
    let mut total = DVector::zeros(q);
    for c in cross {
        let mut d2 = covariance_jacobian(&c.mu_full, &c.sizes_full, params)?;
        if let Some(t) = transform {
            d2 = d2 * t;
        }
        let eta = stacked_covariance(&c.mu_full, &c.sizes_full, params)?;
        total += d2.transpose() * (c.stacked() - eta);
    }
    Ok(total)
}

/// Exponential-decay estimating equations reduced to per-lag sums.
#[derive(Debug, Clone)]
pub struct DecayEquations {
    within: WithinSums,
    lags: LagSums,
}

impl DecayEquations {
    pub fn new(cross: &[CrossProducts]) -> Result<Self> {
        let within = within_sums(cross);
        require_within(&within)?;
        let lags = lag_sums(cross);
        require_between(&lags)?;
        Ok(Self { within, lags })
    }

    /// `alpha0` solving the within-period equation for a given `rho`.
    pub fn alpha0_given(&self, rho: f64) -> f64 {
        let (mut num, mut den) = (self.within.num, self.within.den);
        for d in 1..self.lags.a.len() {
            let r = rho.powi(d as i32);
            num += self.lags.a[d] * r;
            den += self.lags.b[d] * r * r;
        }
        num / den
    }

    /// The decay equation as a polynomial in `rho` for fixed `alpha0`,
    /// summed over ordered period pairs.
    pub fn decay_polynomial(&self, alpha0: f64) -> Polynomial {
        let max = self.lags.a.len().saturating_sub(1);
        let mut coeffs = vec![0.0; (2 * max).max(1)];
        for d in 1..=max {
            let w = 2.0 * d as f64;
            coeffs[d - 1] += w * self.lags.a[d];
            coeffs[2 * d - 1] -= w * alpha0 * self.lags.b[d];
        }
        Polynomial::new(coeffs)
    }

    pub fn decay_equation(&self, alpha0: f64, rho: f64) -> f64 {
        self.decay_polynomial(alpha0).eval(rho)
    }

    /// Off-diagonal least-squares loss up to a constant, for ranking roots.
    fn loss(&self, alpha0: f64, rho: f64) -> f64 {
        (1..self.lags.a.len())
            .map(|d| {
                let r = rho.powi(d as i32);
                -2.0 * alpha0 * self.lags.a[d] * r + alpha0 * alpha0 * self.lags.b[d] * r * r
            })
            .sum()
    }

    /// Root of the decay equation in `[0, 1]`; the boundary with the smaller
    /// residual when there is none (flagged by `false`).
    pub fn solve_rho(&self, alpha0: f64) -> (f64, bool) {
        let p = self.decay_polynomial(alpha0);
        let roots = roots_in_interval(&p, 0.0, 1.0, ROOT_GRID);
        if roots.is_empty() {
            let rho = if p.eval(0.0).abs() <= p.eval(1.0).abs() { 0.0 } else { 1.0 };
            return (rho, false);
        }
        let best = roots
            .into_iter()
            .min_by(|&x, &y| self.loss(alpha0, x).total_cmp(&self.loss(alpha0, y)))
            .expect("non-empty");
        (best, true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayUpdate {
    pub alpha0: f64,
    pub rho: f64,
    pub inner_iterations: usize,
    /// Set when the decay equation had no root in `[0, 1]`.
    pub warning: Option<String>,
}

/// Alternates the `alpha0` and `rho` equations from `previous` until the joint
/// change drops below the inner tolerance.
pub fn ed_update(cross: &[CrossProducts], previous: (f64, f64)) -> Result<DecayUpdate> {
    let eqs = DecayEquations::new(cross)?;
    let (mut alpha0, mut rho) = previous;
    rho = rho.clamp(0.0, 1.0);
    let mut trace = Vec::new();
    for it in 1..=ED_INNER_MAX {
        let a_new = eqs.alpha0_given(rho);
        let (r_new, interior) = eqs.solve_rho(a_new);
        let change = (a_new - alpha0).abs().max((r_new - rho).abs());
        alpha0 = a_new;
        rho = r_new;
        trace.push(change);
        if change < ED_INNER_TOLERANCE {
            let warning = (!interior).then(|| {
                format!("decay equation has no root in [0, 1]; rho set to boundary {rho}")
            });
            return Ok(DecayUpdate { alpha0, rho, inner_iterations: it, warning });
        }
    }
    Err(SwgeeError::NonConvergence {
        message: format!("decay update did not settle within {ED_INNER_MAX} inner iterations"),
        trace,
    })
}
