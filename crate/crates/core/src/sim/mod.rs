//! Simulation of stepped wedge trials with correlated binary outcomes and
//! the bias/coverage experiment harness.

pub mod qaqish;

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{CorrelationParams, Structure};
use crate::data::TrialData;
use crate::efficiency::{staircase, SizeSampler};
use crate::engine::{fit, Adjustment, ModelSpec};
use crate::error::{Result, SwgeeError};
use crate::inference::{intervals, sandwich_set, Correction};
use crate::link::Link;

pub use qaqish::{qaqish_sample, structured_cluster_sample};

const MAX_SIZE_REDRAWS: usize = 100;
/// Share of non-converged replicates above which a report is unreliable.
pub const UNRELIABLE_SHARE: f64 = 0.05;

/// Independent generator for replicate `index` of a run seeded by `master`.
pub fn replicate_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub clusters: usize,
    pub periods: usize,
    pub link: Link,
    pub delta: f64,
    pub baseline_prevalence: f64,
    pub truth: CorrelationParams,
    pub sizes: SizeSampler,
    pub replicates: usize,
    pub seed: u64,
    pub adjustments: Vec<Adjustment>,
    pub corrections: Vec<Correction>,
    pub confidence: f64,
}

pub const PRESETS: [&str; 5] =
    ["table2-ne-small", "table2-ne-large", "table2-ed-small", "table2-ed-large", "coverage-sweep"];

impl SimConfig {
    pub fn new(clusters: usize, truth: CorrelationParams, sizes: SizeSampler, replicates: usize, seed: u64) -> Self {
        Self {
            clusters,
            periods: 5,
            link: Link::Logit,
            delta: 0.5f64.ln(),
            baseline_prevalence: 0.35,
            truth,
            sizes,
            replicates,
            seed,
            adjustments: vec![Adjustment::Uee, Adjustment::Maee],
            corrections: Correction::ALL.to_vec(),
            confidence: 0.95,
        }
    }

    /// Named configurations: `small`/`large` refer to the magnitude of the
    /// true correlations. Cluster count defaults to 12 (24 for the coverage
    /// sweep), replicates to 3000.
    pub fn preset(name: &str) -> Result<Self> {
        let wide = SizeSampler::DiscreteUniform { low: 50, high: 150 };
        let narrow = SizeSampler::DiscreteUniform { low: 25, high: 50 };
        let ne = |a0, a1| CorrelationParams::NestedExchangeable { alpha0: a0, alpha1: a1 };
        let ed = |a0, rho| CorrelationParams::ExponentialDecay { alpha0: a0, rho };
        Ok(match name {
            "table2-ne-small" => Self::new(12, ne(0.03, 0.015), wide, 3000, 0),
            "table2-ne-large" => Self::new(12, ne(0.1, 0.05), wide, 3000, 0),
            "table2-ed-small" => Self::new(12, ed(0.03, 0.8), wide, 3000, 0),
            "table2-ed-large" => Self::new(12, ed(0.1, 0.5), wide, 3000, 0),
            "coverage-sweep" => Self::new(24, ne(0.03, 0.015), narrow, 3000, 0),
            other => {
                return Err(SwgeeError::InvalidConfig(format!(
                    "unknown preset {other:?} (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.periods < 2 {
            return Err(SwgeeError::InvalidConfig("J ≥ 2 required".into()));
        }
        if self.clusters < 3 || self.clusters % (self.periods - 1) != 0 {
            return Err(SwgeeError::InvalidConfig(format!(
                "I = {} must be at least 3 and divisible by the {} waves",
                self.clusters,
                self.periods - 1
            )));
        }
        if !(self.baseline_prevalence > 0.0 && self.baseline_prevalence < 1.0) {
            return Err(SwgeeError::InvalidConfig("baseline prevalence must lie in (0, 1)".into()));
        }
        if self.replicates == 0 {
            return Err(SwgeeError::InvalidConfig("replicates must be at least 1".into()));
        }
        if self.adjustments.is_empty() {
            return Err(SwgeeError::InvalidConfig("no adjustment selected".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(SwgeeError::InvalidConfig("confidence must lie in (0, 1)".into()));
        }
        self.sizes.validate()?;
        self.truth.check()
    }

    /// True `(beta_1, .., beta_J, delta)`: baseline prevalence in period 1,
    /// then `beta_{j+1} = beta_j - 0.1 * 0.5^j`.
    pub fn true_theta(&self) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.periods + 1);
        let mut beta = self.link.apply(self.baseline_prevalence);
        for j in 1..=self.periods {
            theta.push(beta);
            beta -= 0.1 * 0.5f64.powi(j as i32);
        }
        theta.push(self.delta);
        theta
    }

    pub fn treatment(&self) -> Result<Vec<Vec<u8>>> {
        staircase(self.clusters, self.periods)
    }
}

/// Draws one trial for replicate `index`; sizes are redrawn when the
/// generator hits an infeasible conditional mean.
pub fn simulate_trial(config: &SimConfig, index: u64) -> Result<TrialData> {
    let mut rng = replicate_rng(config.seed, index);
    simulate_with(config, &mut rng, index)
}

fn simulate_with(config: &SimConfig, rng: &mut ChaCha8Rng, index: u64) -> Result<TrialData> {
    let treatment = config.treatment()?;
    let theta = config.true_theta();
    let mut last = None;
    for attempt in 0..MAX_SIZE_REDRAWS {
        let sizes = config.sizes.draw_matrix(rng, config.clusters, config.periods);
        let mut totals = Vec::with_capacity(config.clusters);
        let mut failed = None;
        for (x, n) in treatment.iter().zip(&sizes) {
            let (mu, _, _) = crate::engine::mean::cluster_mean(&theta, config.link, x);
            match structured_cluster_sample(&mu, n, &config.truth, rng) {
                Ok(t) => totals.push(t),
                Err(e @ SwgeeError::Feasibility { .. }) => {
                    failed = Some(e);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        match failed {
            None => return TrialData::from_matrices(sizes, totals, treatment),
            Some(e) => {
                debug!("replicate {index}: redrawing sizes after attempt {attempt}: {e}");
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Estimates and interval outcomes of one fit within a replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFit {
    pub adjustment: Adjustment,
    pub converged: bool,
    pub estimates: Vec<f64>,
    /// `(estimator, per-parameter coverage indicator)`; `None` where the
    /// estimator does not cover the parameter or failed.
    pub covered: Vec<(String, Vec<Option<bool>>)>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub fits: Vec<ReplicateFit>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBias {
    pub parameter: String,
    pub truth: f64,
    pub mean_estimate: f64,
    /// `100 (mean - truth) / truth`; absent when the truth is zero.
    pub relative_bias_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub estimator: String,
    pub parameter: String,
    pub coverage: Option<f64>,
    pub evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentSummary {
    pub adjustment: Adjustment,
    pub converged: usize,
    pub non_converged: usize,
    pub unreliable: bool,
    pub bias: Vec<ParameterBias>,
    pub coverage: Vec<Coverage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: SimConfig,
    pub parameters: Vec<String>,
    pub truth: Vec<f64>,
    pub replicates: usize,
    /// Replicates whose data could not be generated.
    pub generation_failures: usize,
    pub summaries: Vec<AdjustmentSummary>,
}

fn estimator_names(corrections: &[Correction]) -> Vec<String> {
    std::iter::once("model".to_string()).chain(corrections.iter().map(|c| c.name().to_string())).collect()
}

fn fit_replicate(config: &SimConfig, data: &TrialData, truth: &[f64], adjustment: Adjustment) -> ReplicateFit {
    let spec = ModelSpec { link: config.link, ..ModelSpec::new(config.truth.structure(), adjustment) };
    let dim = truth.len();
    let names = estimator_names(&config.corrections);
    let mut out = ReplicateFit {
        adjustment,
        converged: false,
        estimates: vec![],
        covered: names.iter().map(|n| (n.clone(), vec![None; dim])).collect(),
        error: None,
    };
    let f = match fit(data, &spec) {
        Ok(f) => f,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    out.converged = f.converged;
    out.estimates = f.theta.iter().copied().chain(f.alpha.values()).collect();
    if !f.converged {
        return out;
    }
    let set = match sandwich_set(&f, data, &config.corrections, false) {
        Ok(s) => s,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let mut covs = vec![set.model_based.clone()];
    covs.extend(config.corrections.iter().map(|&c| set.get(c).expect("requested").clone()));
    for (slot, cov) in out.covered.iter_mut().zip(&covs) {
        if let Ok(rep) = intervals(&f, data.n_clusters(), cov, config.confidence) {
            for (k, iv) in rep.intervals.iter().enumerate() {
                slot.1[k] = Some(iv.lower <= truth[k] && truth[k] <= iv.upper);
            }
        }
    }
    out
}

/// Simulates and fits one replicate.
pub fn run_replicate(config: &SimConfig, index: usize) -> ReplicateOutcome {
    let truth = true_parameters(config);
    match simulate_trial(config, index as u64) {
        Ok(data) => ReplicateOutcome {
            replicate: index,
            fits: config.adjustments.iter().map(|&a| fit_replicate(config, &data, &truth, a)).collect(),
            error: None,
        },
        Err(e) => ReplicateOutcome { replicate: index, fits: vec![], error: Some(e.to_string()) },
    }
}

pub fn true_parameters(config: &SimConfig) -> Vec<f64> {
    let mut v = config.true_theta();
    v.extend(config.truth.values());
    v
}

pub fn run_replicates(config: &SimConfig) -> Result<Vec<ReplicateOutcome>> {
    config.validate()?;
    Ok((0..config.replicates).into_par_iter().map(|k| run_replicate(config, k)).collect())
}

pub fn summarize(config: &SimConfig, outcomes: &[ReplicateOutcome]) -> ExperimentReport {
    let truth = true_parameters(config);
    let names = names_for(config.periods, config.truth.structure());
    let generated: Vec<&ReplicateOutcome> = outcomes.iter().filter(|o| o.error.is_none()).collect();
    let summaries = config
        .adjustments
        .iter()
        .enumerate()
        .map(|(slot, &adjustment)| {
            let fits: Vec<&ReplicateFit> = generated.iter().map(|o| &o.fits[slot]).collect();
            let good: Vec<&&ReplicateFit> = fits.iter().filter(|f| f.converged).collect();
            let non_converged = fits.len() - good.len();
            let bias = names
                .iter()
                .enumerate()
                .map(|(k, name)| {
                    let mean = if good.is_empty() {
                        f64::NAN
                    } else {
                        good.iter().map(|f| f.estimates[k]).sum::<f64>() / good.len() as f64
                    };
                    ParameterBias {
                        parameter: name.clone(),
                        truth: truth[k],
                        mean_estimate: mean,
                        relative_bias_pct: (truth[k] != 0.0 && mean.is_finite())
                            .then(|| 100.0 * (mean - truth[k]) / truth[k]),
                    }
                })
                .collect();
            let mut coverage = Vec::new();
            for (e, estimator) in estimator_names(&config.corrections).iter().enumerate() {
                for (k, name) in names.iter().enumerate() {
                    let hits: Vec<bool> = good.iter().filter_map(|f| f.covered[e].1[k]).collect();
                    coverage.push(Coverage {
                        estimator: estimator.clone(),
                        parameter: name.clone(),
                        coverage: (!hits.is_empty())
                            .then(|| hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64),
                        evaluated: hits.len(),
                    });
                }
            }
            AdjustmentSummary {
                adjustment,
                converged: good.len(),
                non_converged,
                unreliable: fits.is_empty() || non_converged as f64 > UNRELIABLE_SHARE * fits.len() as f64,
                bias,
                coverage,
            }
        })
        .collect();
    ExperimentReport {
        config: config.clone(),
        parameters: names,
        truth,
        replicates: outcomes.len(),
        generation_failures: outcomes.len() - generated.len(),
        summaries,
    }
}

pub fn run_experiment(config: &SimConfig) -> Result<ExperimentReport> {
    let outcomes = run_replicates(config)?;
    Ok(summarize(config, &outcomes))
}

/// Per-replicate estimates as CSV, one row per replicate and adjustment.
pub fn replicates_csv(config: &SimConfig, outcomes: &[ReplicateOutcome]) -> Result<String> {
    let structure = config.truth.structure();
    let mut header = vec!["replicate".to_string(), "adjustment".into(), "converged".into()];
    header.extend((1..=config.periods).map(|k| format!("beta{k}")));
    header.push("delta".into());
    header.extend(structure.param_names().iter().map(|s| s.to_string()));
    header.push("error".into());
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| SwgeeError::Input(e.to_string());
    w.write_record(&header).map_err(io)?;
    let width = config.periods + 1 + structure.dim();
    for o in outcomes {
        if let Some(e) = &o.error {
            let mut row = vec![o.replicate.to_string(), String::new(), "false".into()];
            row.extend(std::iter::repeat(String::new()).take(width));
            row.push(e.clone());
            w.write_record(&row).map_err(io)?;
            continue;
        }
        for f in &o.fits {
            let mut row = vec![
                o.replicate.to_string(),
                format!("{:?}", f.adjustment).to_lowercase(),
                f.converged.to_string(),
            ];
            if f.estimates.is_empty() {
                row.extend(std::iter::repeat(String::new()).take(width));
            } else {
                row.extend(f.estimates.iter().map(|v| format!("{v:e}")));
            }
            row.push(f.error.clone().unwrap_or_default());
            w.write_record(&row).map_err(io)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| SwgeeError::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| SwgeeError::Input(e.to_string()))
}

/// Fitted parameter names for a structure over `periods` periods.
pub fn names_for(periods: usize, structure: Structure) -> Vec<String> {
    (1..=periods)
        .map(|k| format!("beta{k}"))
        .chain(std::iter::once("delta".to_string()))
        .chain(structure.param_names().iter().map(|s| s.to_string()))
        .collect()
}
