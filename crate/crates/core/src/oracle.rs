//! Randomized check that the cluster-period quasi-score and information
//! equal their individual-level counterparts.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::correlation::{expand_individual, induced_covariance, CorrelationParams, Structure};
use crate::engine::mean::cluster_mean;
use crate::error::{Result, SwgeeError};
use crate::linalg;
use crate::link::Link;
use crate::sim::replicate_rng;

pub const MAX_CLUSTERS: usize = 4;
pub const MAX_PERIODS: usize = 3;
pub const MAX_SIZE: u64 = 5;
pub const ORACLE_TOLERANCE: f64 = 1e-8;

/// One randomly drawn trial with parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleInstance {
    pub theta: Vec<f64>,
    pub params: CorrelationParams,
    pub sizes: Vec<Vec<u64>>,
    pub totals: Vec<Vec<u64>>,
    pub treatment: Vec<Vec<u8>>,
}

pub fn random_instance<R: Rng>(rng: &mut R, structure: Structure) -> OracleInstance {
    let i = rng.random_range(1..=MAX_CLUSTERS);
    let j = rng.random_range(1..=MAX_PERIODS);
    let alpha0 = rng.random_range(0.0..0.5);
    let params = match structure {
        Structure::ExponentialDecay => {
            CorrelationParams::ExponentialDecay { alpha0, rho: rng.random_range(0.0..=1.0) }
        }
        Structure::Exchangeable => CorrelationParams::Exchangeable { alpha0 },
        Structure::Independence => CorrelationParams::Independence,
        Structure::NestedExchangeable => {
            CorrelationParams::NestedExchangeable { alpha0, alpha1: rng.random_range(0.0..=alpha0) }
        }
    };
    let theta = (0..=j).map(|_| rng.random_range(-1.5..1.5)).collect();
    let sizes: Vec<Vec<u64>> =
        (0..i).map(|_| (0..j).map(|_| rng.random_range(1..=MAX_SIZE)).collect()).collect();
    let totals = sizes.iter().map(|row| row.iter().map(|&n| rng.random_range(0..=n)).collect()).collect();
    let treatment = (0..i).map(|_| (0..j).map(|_| rng.random_range(0..=1u8)).collect()).collect();
    OracleInstance { theta, params, sizes, totals, treatment }
}

/// Largest scaled discrepancy between the two formulations over all clusters
/// of `instance`. `corrupt_v1` perturbs the cluster-period covariance, which
/// must break the identity.
pub fn discrepancy(instance: &OracleInstance, link: Link, corrupt_v1: bool) -> Result<f64> {
    let mut worst = 0.0_f64;
    for c in 0..instance.sizes.len() {
        let sizes = &instance.sizes[c];
        let (mu, d1, _) = cluster_mean(&instance.theta, link, &instance.treatment[c]);
        let cov = induced_covariance(&mu, sizes, &instance.params)?;
        let mut v1_inv = cov.v1_inv.clone();
        if corrupt_v1 {
            let perturbed = &cov.v1 * 1.1 + DMatrix::from_diagonal(&cov.v1.diagonal()) * 0.05;
            v1_inv = linalg::spd_inverse(&perturbed)
                .ok_or_else(|| SwgeeError::Numerical("corrupted V1 not invertible".into()))?;
        }
        let ybar = DVector::from_iterator(
            cov.periods.len(),
            cov.periods.iter().map(|&p| instance.totals[c][p] as f64 / sizes[p] as f64),
        );
        let mu_obs = DVector::from_iterator(cov.periods.len(), cov.periods.iter().map(|&p| mu[p]));
        let d1_obs = DMatrix::from_fn(cov.periods.len(), d1.ncols(), |r, k| d1[(cov.periods[r], k)]);
        let score_cp = d1_obs.transpose() * &v1_inv * (ybar - mu_obs);
        let info_cp = d1_obs.transpose() * &v1_inv * &d1_obs;

        let ind = expand_individual(sizes, &mu, &d1, &instance.params)?;
        let m1_inv = linalg::spd_inverse(&ind.m1)
            .ok_or_else(|| SwgeeError::Numerical("individual covariance not invertible".into()))?;
        // any outcome vector with the right totals: ones first within a period
        let mut seen = vec![0u64; sizes.len()];
        let y = DVector::from_iterator(
            ind.period_of.len(),
            ind.period_of.iter().map(|&p| {
                seen[p] += 1;
                if seen[p] <= instance.totals[c][p] {
                    1.0
                } else {
                    0.0
                }
            }),
        );
        let score_ind = ind.e1.transpose() * &m1_inv * (y - &ind.vartheta);
        let info_ind = ind.e1.transpose() * &m1_inv * &ind.e1;
        let scale = 1.0_f64.max(score_ind.amax()).max(info_ind.amax());
        worst = worst
            .max((score_cp - score_ind).amax() / scale)
            .max((info_cp - info_ind).amax() / scale);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub trials: usize,
    pub max_discrepancy: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// First instance exceeding the tolerance, if any.
    pub offending: Option<OracleInstance>,
}

/// Runs `trials` random instances per structure, instance `k` drawn from its
/// own stream of `seed`.
pub fn run_oracle(structures: &[Structure], trials: usize, seed: u64, corrupt_v1: bool) -> Result<OracleReport> {
    let mut max = 0.0_f64;
    let mut offending = None;
    for (s, &structure) in structures.iter().enumerate() {
        for k in 0..trials {
            let mut rng = replicate_rng(seed, (s * trials + k) as u64);
            let inst = random_instance(&mut rng, structure);
            let d = discrepancy(&inst, Link::Logit, corrupt_v1)?;
            if !(d < ORACLE_TOLERANCE) && offending.is_none() {
                offending = Some(inst);
            }
            max = if d.is_nan() { f64::NAN } else { max.max(d) };
        }
    }
    Ok(OracleReport {
        trials: trials * structures.len(),
        max_discrepancy: max,
        tolerance: ORACLE_TOLERANCE,
        passed: offending.is_none(),
        offending,
    })
}
