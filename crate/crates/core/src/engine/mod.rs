//! Alternating estimation of the marginal mean and the correlation
//! parameters.

pub mod leverage;
pub mod mean;
pub mod update;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::correlation::{induced_covariance, CorrelationParams, Structure};
use crate::data::{validate_design, TrialData};
use crate::error::{Result, SwgeeError};
use crate::linalg;
use crate::link::Link;

pub use leverage::{Adjustment, CrossProducts};
pub use mean::{mean_score, ClusterTerms, MeanScore};

/// Score norm below which a fit may be declared converged.
pub const SCORE_TOLERANCE: f64 = 1e-6;
const MAX_HALVINGS: usize = 10;
const MAX_DIVERGENT_STEPS: usize = 10;
const GLM_MAX_ITER: usize = 100;

/// Restriction tying correlation parameters together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    /// Nested exchangeable with `alpha1 = alpha0`.
    EqualIccs,
    /// Exponential decay with `rho = 1`.
    UnitDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub link: Link,
    pub structure: Structure,
    pub adjustment: Adjustment,
    pub max_outer_iterations: usize,
    /// Convergence threshold on the largest absolute parameter change.
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<Constraint>,
}

impl ModelSpec {
    pub fn new(structure: Structure, adjustment: Adjustment) -> Self {
        Self {
            link: Link::Logit,
            structure,
            adjustment,
            max_outer_iterations: 200,
            tolerance: 1e-8,
            constraint: None,
        }
    }

    pub fn with_constraint(mut self, constraint: Constraint) -> Self {
        self.constraint = Some(constraint);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(SwgeeError::InvalidConfig("tolerance must be positive".into()));
        }
        if self.max_outer_iterations == 0 {
            return Err(SwgeeError::InvalidConfig("max_outer_iterations must be at least 1".into()));
        }
        match (self.constraint, self.structure) {
            (None, _)
            | (Some(Constraint::EqualIccs), Structure::NestedExchangeable)
            | (Some(Constraint::UnitDecay), Structure::ExponentialDecay) => Ok(()),
            (Some(c), s) => Err(SwgeeError::InvalidConfig(format!(
                "constraint {c:?} does not apply to {}",
                s.name()
            ))),
        }
    }

    /// Maps the free correlation parameters onto the full parameter vector;
    /// the identity unless a constraint is set.
    pub fn transform(&self) -> DMatrix<f64> {
        match self.constraint {
            Some(Constraint::EqualIccs) => DMatrix::from_element(2, 1, 1.0),
            Some(Constraint::UnitDecay) => DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            None => DMatrix::identity(self.structure.dim(), self.structure.dim()),
        }
    }
}

/// Per-cluster leverages at the final estimates.
#[derive(Debug, Clone)]
pub struct ClusterLeverage {
    pub h1: DMatrix<f64>,
    pub h2: DMatrix<f64>,
}

/// Per-cluster covariance-equation inputs at the final estimates, stacked
/// row-major over observed `j <= l`.
#[derive(Debug, Clone)]
pub struct ClusterResidualProducts {
    pub periods: Vec<usize>,
    pub s: DVector<f64>,
    pub eta: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub spec: ModelSpec,
    /// `(beta_1, .., beta_J, delta)` on the link scale.
    pub theta: Vec<f64>,
    pub alpha: CorrelationParams,
    /// Last unprojected correlation update.
    pub alpha_raw: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Fitted means, clusters by periods.
    pub mu_hat: Vec<Vec<f64>>,
    pub leverage: Vec<ClusterLeverage>,
    pub residual_products: Vec<ClusterResidualProducts>,
    pub score_norm: f64,
    pub clamped: bool,
    pub projected: bool,
    pub warnings: Vec<String>,
    /// Largest parameter change per outer iteration.
    pub trace: Vec<f64>,
}

impl FitResult {
    pub fn delta(&self) -> f64 {
        *self.theta.last().expect("theta is never empty")
    }
}

fn check_shape(data: &TrialData) -> Result<()> {
    if data.n_clusters() < 2 {
        return Err(SwgeeError::Input("at least two clusters required".into()));
    }
    if data.n_periods() < 2 {
        return Err(SwgeeError::Input("J ≥ 2 required".into()));
    }
    Ok(())
}

fn initial_theta(data: &TrialData, link: Link) -> Vec<f64> {
    let j = data.n_periods();
    let mut theta: Vec<f64> = (0..j)
        .map(|p| {
            let (mut y, mut n) = (0u64, 0u64);
            for c in 0..data.n_clusters() {
                y += data.total(c, p);
                n += data.size(c, p);
            }
            let m = if n == 0 { 0.5 } else { y as f64 / n as f64 };
            link.apply(m.clamp(1e-3, 1.0 - 1e-3))
        })
        .collect();
    theta.push(0.0);
    theta
}

#[derive(Debug)]
struct MeanStep {
    theta: Vec<f64>,
    norm: f64,
    improved: bool,
}

/// One Fisher-scoring step with step-halving on the quasi-score norm.
fn scoring_step(
    theta: &[f64],
    score: &MeanScore,
    params: &CorrelationParams,
    data: &TrialData,
    link: Link,
) -> Result<MeanStep> {
    let omega = linalg::information_inverse(&score.information, "mean")?;
    let step = &omega * &score.score;
    let base = score.norm();
    let mut scale = 1.0;
    let mut fallback = None;
    for _ in 0..=MAX_HALVINGS {
        let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
        if let Ok(s) = mean_score(&trial, params, data, link) {
            let norm = s.norm();
            // near the root the norm is at rounding level; any step is fine
            if norm.is_finite() && (norm <= base || base < 1e-10) {
                return Ok(MeanStep { theta: trial, norm, improved: true });
            }
            if norm.is_finite() {
                fallback = Some(MeanStep { theta: trial, norm, improved: false });
            }
        }
        scale *= 0.5;
    }
    fallback.ok_or_else(|| SwgeeError::NonConvergence {
        message: "no finite quasi-score along the scoring direction".into(),
        trace: vec![base],
    })
}

/// Binomial GLM fit of the mean model under working independence.
pub fn independence_glm(data: &TrialData, link: Link) -> Result<Vec<f64>> {
    check_shape(data)?;
    let params = CorrelationParams::Independence;
    let mut theta = initial_theta(data, link);
    let mut divergent = 0;
    let mut norms = Vec::new();
    for _ in 0..GLM_MAX_ITER {
        let score = mean_score(&theta, &params, data, link)?;
        norms.push(score.norm());
        let step = scoring_step(&theta, &score, &params, data, link)?;
        divergent = if step.improved { 0 } else { divergent + 1 };
        if divergent >= MAX_DIVERGENT_STEPS {
            return Err(SwgeeError::NonConvergence {
                message: "independence GLM diverged".into(),
                trace: norms,
            });
        }
        let change = max_change(&theta, &step.theta);
        theta = step.theta;
        if change < 1e-12 || step.norm < 1e-13 {
            break;
        }
    }
    Ok(theta)
}

fn max_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

fn initial_alpha(spec: &ModelSpec) -> CorrelationParams {
    match (spec.structure, spec.constraint) {
        (Structure::Independence, _) => CorrelationParams::Independence,
        (Structure::Exchangeable, _) => CorrelationParams::Exchangeable { alpha0: 0.01 },
        (Structure::NestedExchangeable, Some(_)) => {
            CorrelationParams::NestedExchangeable { alpha0: 0.01, alpha1: 0.01 }
        }
        (Structure::NestedExchangeable, None) => {
            CorrelationParams::NestedExchangeable { alpha0: 0.01, alpha1: 0.005 }
        }
        (Structure::ExponentialDecay, Some(_)) => {
            CorrelationParams::ExponentialDecay { alpha0: 0.01, rho: 1.0 }
        }
        (Structure::ExponentialDecay, None) => {
            CorrelationParams::ExponentialDecay { alpha0: 0.01, rho: 0.5 }
        }
    }
}

/// Raw correlation update and any warning it produced.
fn correlation_update(
    spec: &ModelSpec,
    cross: &[CrossProducts],
    current: &CorrelationParams,
) -> Result<(Vec<f64>, Option<String>)> {
    match (spec.structure, spec.constraint) {
        (Structure::Independence, _) => Ok((vec![], None)),
        (Structure::Exchangeable, _) => Ok((vec![update::exchangeable_update(cross)?], None)),
        (Structure::NestedExchangeable, None) => {
            let (a0, a1) = update::ne_update(cross)?;
            Ok((vec![a0, a1], None))
        }
        (Structure::NestedExchangeable, Some(_)) => {
            let phi = update::linear_update(cross, spec.structure, &spec.transform())?;
            Ok((vec![phi[0], phi[0]], None))
        }
        (Structure::ExponentialDecay, Some(_)) => {
            let eqs = update::DecayEquations::new(cross)?;
            Ok((vec![eqs.alpha0_given(1.0), 1.0], None))
        }
        (Structure::ExponentialDecay, None) => {
            let prev = current.values();
            let up = update::ed_update(cross, (prev[0], prev[1]))?;
            Ok((vec![up.alpha0, up.rho], up.warning))
        }
    }
}

/// Nearest point of the working feasible region.
fn project(structure: Structure, raw: &[f64], max_n: u64, warnings: &mut Vec<String>) -> Vec<f64> {
    let mut v = raw.to_vec();
    if v.is_empty() {
        return v;
    }
    let a0 = raw[0].clamp(1e-8, 0.999);
    if a0 != raw[0] {
        push_unique(
            warnings,
            format!("alpha0 update {:.3e} outside [1e-8, 0.999]; projected", raw[0]),
        );
    }
    v[0] = a0;
    match structure {
        Structure::NestedExchangeable => {
            let lo = if max_n > 1 { -a0 / (max_n as f64 - 1.0) + 1e-8 } else { f64::NEG_INFINITY };
            let a1 = raw[1].clamp(lo, a0);
            if a1 != raw[1] {
                push_unique(warnings, "alpha1 update outside [-alpha0/(max n - 1), alpha0]; projected".into());
            }
            v[1] = a1;
        }
        Structure::ExponentialDecay => v[1] = raw[1].clamp(0.0, 1.0),
        _ => {}
    }
    v
}

fn push_unique(warnings: &mut Vec<String>, w: String) {
    if !warnings.contains(&w) {
        warnings.push(w);
    }
}

/// Shrinks the between-period parameter towards zero until every cluster's
/// induced covariance is positive definite.
fn ensure_feasible(
    data: &TrialData,
    theta: &[f64],
    link: Link,
    mut params: CorrelationParams,
    warnings: &mut Vec<String>,
) -> Result<(CorrelationParams, bool)> {
    let feasible = |p: &CorrelationParams| {
        (0..data.n_clusters()).all(|c| {
            let (mu, _, _) = mean::cluster_mean(theta, link, &data.treatment()[c]);
            induced_covariance(&mu, &data.sizes()[c], p).is_ok()
        })
    };
    for _ in 0..60 {
        if feasible(&params) {
            return Ok((params, false));
        }
        params = match params {
            CorrelationParams::NestedExchangeable { alpha0, alpha1 } => {
                CorrelationParams::NestedExchangeable { alpha0, alpha1: alpha1 * 0.5 }
            }
            CorrelationParams::ExponentialDecay { alpha0, rho } => {
                CorrelationParams::ExponentialDecay { alpha0, rho: rho * 0.5 }
            }
            CorrelationParams::Exchangeable { alpha0 } => {
                CorrelationParams::Exchangeable { alpha0: alpha0 * 0.5 }
            }
            CorrelationParams::Independence => break,
        };
        push_unique(warnings, "correlation update gave a non positive definite V1; shrunk towards zero".into());
    }
    if feasible(&params) {
        return Ok((params, true));
    }
    Err(SwgeeError::InfeasibleParameters {
        cluster: None,
        message: "no feasible correlation parameters near the update".into(),
    })
}

/// Fits the marginal mean and correlation model by alternating a scoring
/// step for `theta` with the covariance estimating equations for `alpha`.
pub fn fit(data: &TrialData, spec: &ModelSpec) -> Result<FitResult> {
    spec.validate()?;
    check_shape(data)?;
    let mut warnings = validate_design(data).warnings;
    let link = spec.link;
    let max_n = data.sizes().iter().flatten().copied().max().unwrap_or(0);

    let mut theta = independence_glm(data, link)?;
    let mut alpha = initial_alpha(spec);
    let mut alpha_raw = alpha.values();
    let mut projected = false;
    let mut trace = Vec::new();
    let mut norms = Vec::new();
    let mut divergent = 0;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=spec.max_outer_iterations {
        iterations = it;
        let score = mean_score(&theta, &alpha, data, link)?;
        norms.push(score.norm());
        let step = scoring_step(&theta, &score, &alpha, data, link)?;
        divergent = if step.improved { 0 } else { divergent + 1 };
        if divergent >= MAX_DIVERGENT_STEPS {
            return Err(SwgeeError::NonConvergence {
                message: format!("quasi-score norm grew for {MAX_DIVERGENT_STEPS} consecutive steps"),
                trace: norms,
            });
        }
        let new_theta = step.theta;

        let new_alpha = if spec.structure == Structure::Independence {
            alpha
        } else {
            let terms = mean::all_terms(data, &new_theta, link, &alpha)?;
            let info = mean::accumulate_score(&terms, new_theta.len()).information;
            let omega = linalg::information_inverse(&info, "mean")?;
            let (cross, _) =
                leverage::cross_products_from_terms(data, &terms, &omega, spec.adjustment)?;
            let (raw, warn) = correlation_update(spec, &cross, &alpha)?;
            if let Some(w) = warn {
                push_unique(&mut warnings, w);
            }
            let values = project(spec.structure, &raw, max_n, &mut warnings);
            projected |= values != raw;
            alpha_raw = raw;
            let candidate = CorrelationParams::from_values(spec.structure, &values)?;
            let (feasible, shrunk) = ensure_feasible(data, &new_theta, link, candidate, &mut warnings)?;
            projected |= shrunk || feasible != candidate;
            feasible
        };

        let change = max_change(&theta, &new_theta).max(max_change(&alpha.values(), &new_alpha.values()));
        trace.push(change);
        theta = new_theta;
        alpha = new_alpha;
        if change < spec.tolerance {
            let norm = mean_score(&theta, &alpha, data, link)?.norm();
            if norm <= SCORE_TOLERANCE {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        push_unique(
            &mut warnings,
            format!("not converged after {iterations} outer iterations"),
        );
    }
    finish(data, spec, theta, alpha, alpha_raw, converged, iterations, projected, warnings, trace)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    data: &TrialData,
    spec: &ModelSpec,
    theta: Vec<f64>,
    alpha: CorrelationParams,
    alpha_raw: Vec<f64>,
    converged: bool,
    iterations: usize,
    projected: bool,
    warnings: Vec<String>,
    trace: Vec<f64>,
) -> Result<FitResult> {
    let terms = mean::all_terms(data, &theta, spec.link, &alpha)?;
    let score = mean::accumulate_score(&terms, theta.len());
    let omega = linalg::information_inverse(&score.information, "mean")?;
    let (cross, h1) = leverage::cross_products_from_terms(data, &terms, &omega, spec.adjustment)?;
    let h2 = correlation_leverage(&terms, &spec.transform())?;
    let leverage = h1.into_iter().zip(h2).map(|(h1, h2)| ClusterLeverage { h1, h2 }).collect();
    let residual_products = cross
        .iter()
        .zip(&terms)
        .map(|(c, t)| ClusterResidualProducts {
            periods: c.periods.clone(),
            s: c.stacked(),
            eta: t.cov.eta.clone(),
        })
        .collect();
    let mu_hat = terms.iter().map(|t| t.mu_full.clone()).collect();
    Ok(FitResult {
        spec: *spec,
        theta,
        alpha,
        alpha_raw,
        converged,
        iterations,
        mu_hat,
        leverage,
        residual_products,
        score_norm: score.norm(),
        clamped: score.clamped,
        projected,
        warnings,
        trace,
    })
}

/// `P = (sum D2' D2)^{-1}` over the (reparameterized) correlation Jacobians.
pub fn correlation_information_inverse(
    terms: &[ClusterTerms],
    transform: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let q = transform.ncols();
    let mut info = DMatrix::zeros(q, q);
    for t in terms {
        let d2 = &t.cov.d2 * transform;
        info += d2.transpose() * &d2;
    }
    if q == 0 {
        return Ok(info);
    }
    // alpha0 near zero leaves the decay parameter weakly determined; only an
    // exactly singular matrix is rejected here
    linalg::spd_inverse(&info)
        .map(|m| linalg::symmetrize(&m))
        .ok_or_else(|| SwgeeError::Unidentified("correlation information matrix is singular".into()))
}

/// `H2 = D2 P D2'` per cluster.
pub fn correlation_leverage(
    terms: &[ClusterTerms],
    transform: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    let p = correlation_information_inverse(terms, transform)?;
    Ok(terms
        .iter()
        .map(|t| {
            let d2 = &t.cov.d2 * transform;
            &d2 * &p * d2.transpose()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_trial() -> TrialData {
        TrialData::from_matrices(
            vec![
                vec![30, 28, 35, 31],
                vec![25, 40, 33, 29],
                vec![38, 27, 30, 36],
                vec![33, 31, 26, 40],
                vec![29, 35, 37, 30],
                vec![36, 30, 28, 33],
            ],
            vec![
                vec![11, 9, 10, 8],
                vec![8, 14, 9, 7],
                vec![14, 8, 7, 9],
                vec![12, 10, 6, 8],
                vec![9, 12, 11, 6],
                vec![13, 9, 8, 7],
            ],
            vec![
                vec![0, 1, 1, 1],
                vec![0, 1, 1, 1],
                vec![0, 0, 1, 1],
                vec![0, 0, 1, 1],
                vec![0, 0, 0, 1],
                vec![0, 0, 0, 1],
            ],
        )
        .unwrap()
    }

    #[test]
    fn spec_validation() {
        let mut s = ModelSpec::new(Structure::Exchangeable, Adjustment::Uee);
        s.tolerance = 0.0;
        assert!(s.validate().is_err());
        let s = ModelSpec::new(Structure::Exchangeable, Adjustment::Uee)
            .with_constraint(Constraint::EqualIccs);
        assert!(s.validate().is_err());
    }

    #[test]
    fn converged_fit_satisfies_invariants() {
        let data = small_trial();
        for structure in [
            Structure::Independence,
            Structure::Exchangeable,
            Structure::NestedExchangeable,
            Structure::ExponentialDecay,
        ] {
            for adj in [Adjustment::Uee, Adjustment::Maee] {
                let f = fit(&data, &ModelSpec::new(structure, adj)).unwrap();
                assert!(f.converged, "{structure:?} {adj:?}");
                assert!(f.score_norm <= SCORE_TOLERANCE);
                let tr: f64 = f.leverage.iter().map(|l| l.h1.trace()).sum();
                assert!((tr - 5.0).abs() < 1e-9);
                let tr2: f64 = f.leverage.iter().map(|l| l.h2.trace()).sum();
                assert!((tr2 - structure.dim() as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn all_control_design_is_unidentified() {
        let data = TrialData::from_matrices(
            vec![vec![10, 10], vec![10, 10]],
            vec![vec![3, 4], vec![5, 2]],
            vec![vec![0, 0], vec![0, 0]],
        )
        .unwrap();
        let err = fit(&data, &ModelSpec::new(Structure::NestedExchangeable, Adjustment::Uee));
        assert!(matches!(err, Err(SwgeeError::Unidentified(_))), "{err:?}");
    }

    #[test]
    fn single_period_rejected() {
        let data =
            TrialData::from_matrices(vec![vec![10], vec![10]], vec![vec![3], vec![5]], vec![vec![0], vec![1]])
                .unwrap();
        let err = fit(&data, &ModelSpec::new(Structure::Exchangeable, Adjustment::Uee)).unwrap_err();
        assert!(err.to_string().contains("J ≥ 2"));
    }

    #[test]
    fn cluster_order_does_not_matter() {
        let data = small_trial();
        let shuffled = data.reorder_clusters(&[3, 0, 5, 1, 4, 2]).unwrap();
        let spec = ModelSpec::new(Structure::NestedExchangeable, Adjustment::Maee);
        let a = fit(&data, &spec).unwrap();
        let b = fit(&shuffled, &spec).unwrap();
        assert!(max_change(&a.theta, &b.theta) < 1e-12);
        assert!(max_change(&a.alpha.values(), &b.alpha.values()) < 1e-12);
    }
}
