//! Asymptotic relative efficiency of modeling the correlation versus working
//! independence when estimating the intervention effect.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{induced_covariance, CorrelationParams};
use crate::engine::mean::cluster_mean;
use crate::error::{Result, SwgeeError};
use crate::link::Link;
use crate::sim::replicate_rng;

/// Cluster-by-period sizes drawn for each replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SizeSampler {
    DiscreteUniform { low: u64, high: u64 },
    /// Resampled with replacement.
    Empirical { values: Vec<u64> },
}

impl SizeSampler {
    pub fn validate(&self) -> Result<()> {
        match self {
            SizeSampler::DiscreteUniform { low, high } if *low >= 1 && low <= high => Ok(()),
            SizeSampler::Empirical { values } if !values.is_empty() && values.iter().all(|&v| v >= 1) => {
                Ok(())
            }
            other => Err(SwgeeError::InvalidConfig(format!("invalid size sampler {other:?}"))),
        }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> u64 {
        match self {
            SizeSampler::DiscreteUniform { low, high } => rng.random_range(*low..=*high),
            SizeSampler::Empirical { values } => values[rng.random_range(0..values.len())],
        }
    }

    pub fn draw_matrix<R: Rng>(&self, rng: &mut R, clusters: usize, periods: usize) -> Vec<Vec<u64>> {
        (0..clusters).map(|_| (0..periods).map(|_| self.draw(rng)).collect()).collect()
    }
}

/// Stepped wedge treatment matrix: period 1 all control, then clusters cross
/// over in `J - 1` waves as equal as possible (earlier waves take the extra
/// clusters).
pub fn staircase(clusters: usize, periods: usize) -> Result<Vec<Vec<u8>>> {
    if clusters < 1 || periods < 2 {
        return Err(SwgeeError::InvalidConfig("staircase needs I >= 1 and J >= 2".into()));
    }
    let waves = periods - 1;
    let base = clusters / waves;
    let extra = clusters % waves;
    let mut rows = Vec::with_capacity(clusters);
    for w in 0..waves {
        let count = base + usize::from(w < extra);
        for _ in 0..count {
            rows.push((0..periods).map(|p| u8::from(p > w)).collect());
        }
    }
    Ok(rows)
}

/// Period effects falling linearly on the logit scale from `first` to `last`
/// prevalence, followed by `delta`.
pub fn interpolated_theta(periods: usize, first: f64, last: f64, delta: f64) -> Vec<f64> {
    let (a, b) = (Link::Logit.apply(first), Link::Logit.apply(last));
    let mut theta: Vec<f64> = (0..periods)
        .map(|j| {
            let t = if periods > 1 { j as f64 / (periods - 1) as f64 } else { 0.0 };
            a + t * (b - a)
        })
        .collect();
    theta.push(delta);
    theta
}

fn degenerate(what: &str) -> SwgeeError {
    SwgeeError::DegenerateDesign(format!("{what} matrix is singular"))
}

/// Ratio of the working-independence sandwich variance of `delta` to the
/// model-based variance under the true correlation, all at the truth.
pub fn are_tau(
    treatment: &[Vec<u8>],
    link: Link,
    theta: &[f64],
    truth: &CorrelationParams,
    sizes: &[Vec<u64>],
) -> Result<f64> {
    let p = theta.len();
    if treatment.len() != sizes.len() || treatment.iter().any(|r| r.len() + 1 != p) {
        return Err(SwgeeError::InvalidConfig("design, sizes and theta disagree in shape".into()));
    }
    let mut a = DMatrix::zeros(p, p);
    let mut b = DMatrix::zeros(p, p);
    let mut info = DMatrix::zeros(p, p);
    for (x, n) in treatment.iter().zip(sizes) {
        let (mu, d1_full, _) = cluster_mean(theta, link, x);
        let cov = induced_covariance(&mu, n, truth)?;
        let d1 = DMatrix::from_fn(cov.periods.len(), p, |r, c| d1_full[(cov.periods[r], c)]);
        // Psi^{-1} D1 with Psi = diag(nu / n)
        let psi_inv_d1 = DMatrix::from_fn(d1.nrows(), p, |r, c| {
            let j = cov.periods[r];
            d1[(r, c)] * n[j] as f64 / (mu[j] * (1.0 - mu[j]))
        });
        a += d1.transpose() * &psi_inv_d1;
        b += psi_inv_d1.transpose() * &cov.v1 * &psi_inv_d1;
        info += d1.transpose() * &cov.v1_inv * &d1;
    }
    let a_inv = a.try_inverse().ok_or_else(|| degenerate("working independence bread"))?;
    let info_inv = info.try_inverse().ok_or_else(|| degenerate("information"))?;
    let sandwich = &a_inv * b * &a_inv;
    Ok(sandwich[(p - 1, p - 1)] / info_inv[(p - 1, p - 1)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreConfig {
    pub treatment: Vec<Vec<u8>>,
    pub link: Link,
    pub theta: Vec<f64>,
    pub truth: CorrelationParams,
    pub sizes: SizeSampler,
    pub replicates: usize,
    pub seed: u64,
}

impl AreConfig {
    /// Staircase design with prevalence falling from 25% to 20% and an
    /// intervention odds ratio of 0.75.
    pub fn staircase_default(
        clusters: usize,
        periods: usize,
        truth: CorrelationParams,
        sizes: SizeSampler,
        replicates: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            treatment: staircase(clusters, periods)?,
            link: Link::Logit,
            theta: interpolated_theta(periods, 0.25, 0.20, 0.75f64.ln()),
            truth,
            sizes,
            replicates,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(SwgeeError::InvalidConfig("replicates must be at least 1".into()));
        }
        self.sizes.validate()?;
        self.truth.check()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantile {
    pub p: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreReport {
    pub mean: f64,
    pub mc_se: f64,
    pub replicates: usize,
    pub quantiles: Vec<Quantile>,
}

const QUANTILES: [f64; 7] = [0.0, 0.025, 0.25, 0.5, 0.75, 0.975, 1.0];

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-replicate `tau` values, in replicate order.
pub fn are_draws(config: &AreConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let (i, j) = (config.treatment.len(), config.theta.len() - 1);
    (0..config.replicates)
        .into_par_iter()
        .map(|k| {
            let mut rng: ChaCha8Rng = replicate_rng(config.seed, k as u64);
            let sizes = config.sizes.draw_matrix(&mut rng, i, j);
            are_tau(&config.treatment, config.link, &config.theta, &config.truth, &sizes)
        })
        .collect()
}

pub fn are_estimate(config: &AreConfig) -> Result<AreReport> {
    let taus = are_draws(config)?;
    let k = taus.len() as f64;
    let mean = taus.iter().sum::<f64>() / k;
    let mc_se = if taus.len() > 1 {
        (taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
    } else {
        0.0
    };
    let mut sorted = taus;
    sorted.sort_by(f64::total_cmp);
    let quantiles = QUANTILES.iter().map(|&p| Quantile { p, value: quantile(&sorted, p) }).collect();
    Ok(AreReport { mean, mc_se, replicates: sorted.len(), quantiles })
}
