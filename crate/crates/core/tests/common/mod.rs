#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use swgee::efficiency::SizeSampler;
use swgee::sim::{simulate_trial, SimConfig};
use swgee::{CorrelationParams, TrialData};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn fixture(name: &str) -> TrialData {
    let file = std::fs::File::open(fixture_path(name)).unwrap();
    if name.contains("individual") {
        swgee::data::ingest_individual(file).unwrap()
    } else {
        swgee::data::ingest_cluster_period(file).unwrap()
    }
}

/// Simulated stepped wedge trial with `clusters` divisible by `periods - 1`.
pub fn simulated(clusters: usize, periods: usize, truth: CorrelationParams, low: u64, high: u64, seed: u64) -> TrialData {
    let mut cfg = SimConfig::new(clusters, truth, SizeSampler::DiscreteUniform { low, high }, 1, seed);
    cfg.periods = periods;
    simulate_trial(&cfg, 0).unwrap()
}

/// Arbitrary (not necessarily stepped wedge) trial with independent binomial
/// cells.
pub fn random_trial<R: Rng>(rng: &mut R, clusters: usize, periods: usize, max_n: u64) -> TrialData {
    let sizes: Vec<Vec<u64>> =
        (0..clusters).map(|_| (0..periods).map(|_| rng.random_range(1..=max_n)).collect()).collect();
    let totals = sizes.iter().map(|r| r.iter().map(|&n| rng.random_range(0..=n)).collect()).collect();
    let treatment = (0..clusters)
        .map(|c| (0..periods).map(|p| u8::from(p > c % periods)).collect())
        .collect();
    TrialData::from_matrices(sizes, totals, treatment).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One pooled moment of a correlated binary generator.
#[derive(Debug)]
pub struct Moment {
    pub label: String,
    pub estimate: f64,
    pub target: f64,
    pub mc_se: f64,
}

impl Moment {
    pub fn z(&self) -> f64 {
        (self.estimate - self.target) / self.mc_se
    }
}

fn moment(label: String, draws: &[f64], target: f64) -> Moment {
    let r = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / r;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (r - 1.0);
    Moment { label, estimate: mean, target, mc_se: (var / r).sqrt() }
}

/// Per-draw unbiased statistics from period totals: period means, average
/// standardized within-period pair products and between-period products.
fn total_statistics(totals: &[u64], sizes: &[u64], means: &[f64]) -> Vec<f64> {
    let j = sizes.len();
    let mut out = Vec::new();
    for p in 0..j {
        out.push(totals[p] as f64 / sizes[p] as f64);
    }
    for p in 0..j {
        let (t, n, m) = (totals[p] as f64, sizes[p] as f64, means[p]);
        let squares = t * (1.0 - 2.0 * m) + n * m * m;
        out.push(((t - n * m).powi(2) - squares) / (n * (n - 1.0) * m * (1.0 - m)));
    }
    for p in 0..j {
        for q in p + 1..j {
            let rp = totals[p] as f64 - sizes[p] as f64 * means[p];
            let rq = totals[q] as f64 - sizes[q] as f64 * means[q];
            let scale = sizes[p] as f64 * sizes[q] as f64 * (means[p] * (1.0 - means[p]) * means[q] * (1.0 - means[q])).sqrt();
            out.push(rp * rq / scale);
        }
    }
    out
}

fn labelled(stats: Vec<Vec<f64>>, j: usize, means: &[f64], params: &CorrelationParams) -> Vec<Moment> {
    let mut labels = Vec::new();
    let mut targets = Vec::new();
    for p in 0..j {
        labels.push(format!("mean p{}", p + 1));
        targets.push(means[p]);
    }
    for p in 0..j {
        labels.push(format!("within p{}", p + 1));
        targets.push(params.alpha0());
    }
    for p in 0..j {
        for q in p + 1..j {
            labels.push(format!("between p{} p{}", p + 1, q + 1));
            targets.push(params.between(p, q));
        }
    }
    (0..labels.len())
        .map(|k| {
            let column: Vec<f64> = stats.iter().map(|s| s[k]).collect();
            moment(labels[k].clone(), &column, targets[k])
        })
        .collect()
}

/// Pooled moments of the block-structured generator.
pub fn structured_moments(means: &[f64], sizes: &[u64], params: &CorrelationParams, draws: usize, seed: u64) -> Vec<Moment> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let stats = (0..draws)
        .map(|_| {
            let totals = swgee::sim::qaqish::structured_cluster_sample(means, sizes, params, &mut rng).unwrap();
            total_statistics(&totals, sizes, means)
        })
        .collect();
    labelled(stats, sizes.len(), means, params)
}

/// Pooled moments of the dense generator on individually listed outcomes.
pub fn dense_moments(means: &[f64], sizes: &[u64], params: &CorrelationParams, draws: usize, seed: u64) -> Vec<Moment> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let corr = swgee::correlation::individual_correlation(sizes, params).unwrap();
    let per: Vec<f64> = sizes.iter().zip(means).flat_map(|(&n, &m)| std::iter::repeat(m).take(n as usize)).collect();
    let stats = (0..draws)
        .map(|_| {
            let y = swgee::sim::qaqish::qaqish_sample(&per, &corr, &mut rng).unwrap();
            let mut totals = vec![0u64; sizes.len()];
            let mut k = 0;
            for (p, &n) in sizes.iter().enumerate() {
                for _ in 0..n {
                    totals[p] += u64::from(y[k]);
                    k += 1;
                }
            }
            total_statistics(&totals, sizes, means)
        })
        .collect();
    labelled(stats, sizes.len(), means, params)
}
