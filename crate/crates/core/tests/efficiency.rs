mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use swgee::correlation::expand_individual;
use swgee::efficiency::{are_draws, are_estimate, are_tau, interpolated_theta, staircase, AreConfig, SizeSampler};
use swgee::engine::mean::cluster_mean;
use swgee::{CorrelationParams, Link};

/// Relative efficiency computed from the individual-level covariance of every
/// participant.
fn individual_tau(treatment: &[Vec<u8>], theta: &[f64], truth: &CorrelationParams, sizes: &[Vec<u64>]) -> f64 {
    let p = theta.len();
    let (mut a, mut b, mut info) = (DMatrix::zeros(p, p), DMatrix::zeros(p, p), DMatrix::zeros(p, p));
    for (x, n) in treatment.iter().zip(sizes) {
        let (mu, d1, _) = cluster_mean(theta, Link::Logit, x);
        let ind = expand_individual(n, &mu, &d1, truth).unwrap();
        let w_inv = DMatrix::from_diagonal(&ind.m1.diagonal().map(|v| 1.0 / v));
        a += ind.e1.transpose() * &w_inv * &ind.e1;
        b += ind.e1.transpose() * &w_inv * &ind.m1 * &w_inv * &ind.e1;
        info += ind.e1.transpose() * ind.m1.clone().try_inverse().unwrap() * &ind.e1;
    }
    let a_inv = a.try_inverse().unwrap();
    let robust = &a_inv * b * &a_inv;
    robust[(p - 1, p - 1)] / info.try_inverse().unwrap()[(p - 1, p - 1)]
}

#[test]
fn cluster_period_tau_equals_individual_level_tau() {
    let design = staircase(6, 4).unwrap();
    let theta = interpolated_theta(4, 0.25, 0.2, 0.75f64.ln());
    let truths = [
        CorrelationParams::NestedExchangeable { alpha0: 0.1, alpha1: 0.05 },
        CorrelationParams::ExponentialDecay { alpha0: 0.1, rho: 0.6 },
        CorrelationParams::Exchangeable { alpha0: 0.05 },
    ];
    for n in [5u64, 100] {
        let sizes: Vec<Vec<u64>> = (0..6).map(|c| (0..4).map(|p| n + ((c + p) % 3) as u64).collect()).collect();
        for truth in &truths {
            let fast = are_tau(&design, Link::Logit, &theta, truth, &sizes).unwrap();
            let slow = individual_tau(&design, &theta, truth, &sizes);
            assert!((fast - slow).abs() <= 1e-9 * slow, "n = {n}, {truth:?}: {fast} vs {slow}");
        }
    }
}

#[test]
fn independence_truth_gives_unit_efficiency() {
    let mut config = AreConfig::staircase_default(
        22,
        5,
        CorrelationParams::Independence,
        SizeSampler::DiscreteUniform { low: 50, high: 150 },
        50,
        3,
    )
    .unwrap();
    for draw in are_draws(&config).unwrap() {
        assert!((draw - 1.0).abs() <= 1e-9);
    }
    config.truth = CorrelationParams::NestedExchangeable { alpha0: 0.0, alpha1: 0.0 };
    assert!((are_estimate(&config).unwrap().mean - 1.0).abs() <= 1e-9);
}

#[test]
fn thread_count_does_not_change_draws() {
    let config = AreConfig::staircase_default(
        22,
        5,
        CorrelationParams::NestedExchangeable { alpha0: 0.1, alpha1: 0.05 },
        SizeSampler::DiscreteUniform { low: 50, high: 150 },
        64,
        9,
    )
    .unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| are_draws(&config).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn quantiles_are_ordered() {
    let config = AreConfig::staircase_default(
        12,
        4,
        CorrelationParams::ExponentialDecay { alpha0: 0.05, rho: 0.5 },
        SizeSampler::Empirical { values: vec![10, 40, 90] },
        40,
        1,
    )
    .unwrap();
    let report = are_estimate(&config).unwrap();
    assert!(report.quantiles.windows(2).all(|w| w[0].value <= w[1].value));
    assert!(report.quantiles[0].value <= report.mean && report.mean <= report.quantiles.last().unwrap().value);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn correct_working_correlation_is_never_less_efficient(
        a0 in 0.001f64..0.3,
        ratio in 0.0f64..1.0,
        rho in 0.0f64..1.0,
        ed in any::<bool>(),
        low in 1u64..100,
        span in 0u64..100,
        seed in any::<u64>(),
    ) {
        let truth = if ed {
            CorrelationParams::ExponentialDecay { alpha0: a0, rho }
        } else {
            CorrelationParams::NestedExchangeable { alpha0: a0, alpha1: a0 * ratio }
        };
        let sizes = SizeSampler::DiscreteUniform { low, high: low + span };
        let config = AreConfig::staircase_default(8, 5, truth, sizes, 4, seed).unwrap();
        for tau in are_draws(&config).unwrap() {
            prop_assert!(tau >= 1.0 - 1e-9, "tau = {tau}");
        }
    }
}
