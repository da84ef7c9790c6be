//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are always printed.

mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swgee::correlation::{covariance_jacobian, induced_covariance, stacked_covariance};
use swgee::efficiency::{are_draws, are_estimate, AreConfig, SizeSampler};
use swgee::engine::leverage::residual_products;
use swgee::engine::mean::cluster_mean;
use swgee::engine::update::{covariance_equation, ed_update, ne_update, DecayEquations};
use swgee::oracle::run_oracle;
use swgee::sim::{run_experiment, ExperimentReport, SimConfig};
use swgee::{fit, Adjustment, Constraint, CorrelationParams, Link, ModelSpec, Structure};

const SEED: u64 = 1;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn bias(report: &ExperimentReport, adj: Adjustment, parameter: &str) -> f64 {
    report
        .summaries
        .iter()
        .find(|s| s.adjustment == adj)
        .and_then(|s| s.bias.iter().find(|b| b.parameter == parameter))
        .and_then(|b| b.relative_bias_pct)
        .unwrap_or(f64::NAN)
}

fn coverage(report: &ExperimentReport, adj: Adjustment, estimator: &str, parameter: &str) -> f64 {
    report
        .summaries
        .iter()
        .find(|s| s.adjustment == adj)
        .and_then(|s| s.coverage.iter().find(|c| c.estimator == estimator && c.parameter == parameter))
        .and_then(|c| c.coverage)
        .unwrap_or(f64::NAN)
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn oracle_identity() -> Outcome {
    let start = Instant::now();
    let report = run_oracle(&[Structure::NestedExchangeable, Structure::ExponentialDecay], 250, SEED, false).unwrap();
    let elapsed = start.elapsed();
    outcome(
        report.trials == 500 && report.passed && report.max_discrepancy < 1e-8 && elapsed < Duration::from_secs(10),
        format!("{} instances, max discrepancy {:.2e}, {:.2} s", report.trials, report.max_discrepancy, secs(elapsed)),
    )
}

fn ne_bias() -> Outcome {
    let mut cfg = SimConfig::preset("table2-ne-small").unwrap();
    cfg.replicates = 500;
    cfg.seed = SEED;
    let start = Instant::now();
    let report = run_experiment(&cfg).unwrap();
    let elapsed = start.elapsed();
    let maee_a0 = bias(&report, Adjustment::Maee, "alpha0");
    let uee_a0 = bias(&report, Adjustment::Uee, "alpha0");
    let maee_d = bias(&report, Adjustment::Maee, "delta");
    let uee_d = bias(&report, Adjustment::Uee, "delta");
    outcome(
        maee_a0.abs() <= 5.0
            && uee_a0 <= -8.0
            && maee_d.abs() <= 2.0
            && uee_d.abs() <= 2.0
            && elapsed < Duration::from_secs(300),
        format!(
            "alpha0 bias MAEE {maee_a0:+.2}% UEE {uee_a0:+.2}%, delta bias MAEE {maee_d:+.2}% UEE {uee_d:+.2}%, {:.1} s",
            secs(elapsed)
        ),
    )
}

fn ed_bias() -> Outcome {
    let mut cfg = SimConfig::preset("table2-ed-large").unwrap();
    cfg.clusters = 24;
    cfg.replicates = 500;
    cfg.seed = SEED;
    let report = run_experiment(&cfg).unwrap();
    let a0 = bias(&report, Adjustment::Maee, "alpha0");
    let rho = bias(&report, Adjustment::Maee, "rho");
    outcome(a0.abs() <= 3.0 && rho.abs() <= 5.0, format!("MAEE alpha0 bias {a0:+.2}%, rho bias {rho:+.2}%"))
}

fn bc1_coverage() -> Outcome {
    let mut cfg = SimConfig::preset("coverage-sweep").unwrap();
    cfg.truth = CorrelationParams::NestedExchangeable { alpha0: 0.1, alpha1: 0.05 };
    cfg.replicates = 500;
    cfg.seed = SEED;
    let report = run_experiment(&cfg).unwrap();
    let maee = coverage(&report, Adjustment::Maee, "BC1", "delta");
    let uee = coverage(&report, Adjustment::Uee, "BC1", "delta");
    let inside = |c: f64| (0.925..=0.975).contains(&c);
    outcome(inside(maee) && inside(uee), format!("BC1 delta coverage MAEE {maee:.3}, UEE {uee:.3}"))
}

fn relative_efficiency() -> Outcome {
    let sizes = SizeSampler::DiscreteUniform { low: 50, high: 150 };
    let config = |truth| AreConfig::staircase_default(22, 5, truth, sizes.clone(), 200, SEED).unwrap();
    let unit = are_draws(&config(CorrelationParams::Independence)).unwrap();
    let unit_err = unit.iter().map(|t| (t - 1.0).abs()).fold(0.0, f64::max);
    let taus: Vec<f64> = [0.1, 0.08, 0.06, 0.04, 0.02]
        .iter()
        .map(|&a1| are_estimate(&config(CorrelationParams::NestedExchangeable { alpha0: 0.1, alpha1: a1 })).unwrap().mean)
        .collect();
    let decreasing = taus.windows(2).all(|w| w[0] > w[1]);
    let above_one = taus.iter().all(|&t| t > 1.0);
    outcome(
        unit_err <= 1e-9 && decreasing && above_one,
        format!(
            "independence |tau - 1| <= {unit_err:.1e}; tau over alpha1 0.1..0.02 = {}",
            taus.iter().map(|t| format!("{t:.3}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn generator_moments() -> Outcome {
    let means = [0.3, 0.25, 0.2];
    let sizes = [5u64, 5, 5];
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (k, truth) in [
        CorrelationParams::NestedExchangeable { alpha0: 0.1, alpha1: 0.05 },
        CorrelationParams::ExponentialDecay { alpha0: 0.1, rho: 0.5 },
    ]
    .iter()
    .enumerate()
    {
        let seed = SEED + k as u64;
        for m in common::structured_moments(&means, &sizes, truth, 100_000, seed)
            .into_iter()
            .chain(common::dense_moments(&means, &sizes, truth, 100_000, seed))
        {
            worst = worst.max(m.z().abs());
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 3.0 && elapsed < Duration::from_secs(30),
        format!("{checked} pooled moments, max |z| {worst:.2} MC SE, {:.2} s", secs(elapsed)),
    )
}

fn closed_forms() -> Outcome {
    let ne = CorrelationParams::NestedExchangeable { alpha0: 0.1, alpha1: 0.05 };
    let ed = CorrelationParams::ExponentialDecay { alpha0: 0.1, rho: 0.5 };
    let mut ne_worst: f64 = 0.0;
    let mut ed_worst: f64 = 0.0;
    let mut interior = 0;
    for seed in 0..20 {
        let data = common::simulated(12, 5, ne, 20, 100, seed);
        let theta = swgee::engine::independence_glm(&data, Link::Logit).unwrap();
        let (cross, _) = residual_products(&theta, &data, &ne, Link::Logit, Adjustment::Maee).unwrap();
        let (a0, a1) = ne_update(&cross).unwrap();
        let solved = CorrelationParams::NestedExchangeable { alpha0: a0, alpha1: a1 };
        ne_worst = ne_worst.max(covariance_equation(&cross, &solved, None).unwrap().amax());

        let data = common::simulated(12, 5, ed, 20, 100, seed);
        let theta = swgee::engine::independence_glm(&data, Link::Logit).unwrap();
        let (cross, _) = residual_products(&theta, &data, &ed, Link::Logit, Adjustment::Maee).unwrap();
        let up = ed_update(&cross, (0.01, 0.5)).unwrap();
        if up.rho > 0.0 && up.rho < 1.0 {
            interior += 1;
            let eq = DecayEquations::new(&cross).unwrap();
            ed_worst = ed_worst.max(eq.decay_equation(up.alpha0, up.rho).abs());
        }
    }
    outcome(
        ne_worst <= 1e-10 && ed_worst <= 1e-8 && interior > 0,
        format!("NE residual {ne_worst:.1e}; decay equation {ed_worst:.1e} over {interior} interior solutions"),
    )
}

fn jacobians() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let j = rng.random_range(2..=5);
        let theta: Vec<f64> = (0..=j).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x: Vec<u8> = (0..j).map(|_| rng.random_range(0..=1)).collect();
        let sizes: Vec<u64> = (0..j).map(|_| rng.random_range(1..=100)).collect();
        let (mu, d1, _) = cluster_mean(&theta, Link::Logit, &x);
        for k in 0..=j {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[k] += h;
            down[k] -= h;
            let (mu_up, _, _) = cluster_mean(&up, Link::Logit, &x);
            let (mu_down, _, _) = cluster_mean(&down, Link::Logit, &x);
            for r in 0..j {
                let fd = (mu_up[r] - mu_down[r]) / (2.0 * h);
                worst = worst.max((fd - d1[(r, k)]).abs() / d1[(r, k)].abs().max(1.0));
            }
        }
        let a0 = rng.random_range(0.01..0.3);
        let params = if case % 2 == 0 {
            CorrelationParams::NestedExchangeable { alpha0: a0, alpha1: rng.random_range(0.0..a0) }
        } else {
            CorrelationParams::ExponentialDecay { alpha0: a0, rho: rng.random_range(0.05..0.95) }
        };
        let d2 = covariance_jacobian(&mu, &sizes, &params).unwrap();
        let values = params.values();
        for k in 0..values.len() {
            let shifted = |delta: f64| {
                let mut v = values.clone();
                v[k] += delta;
                let p = CorrelationParams::from_values(params.structure(), &v).unwrap();
                stacked_covariance(&mu, &sizes, &p).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            for r in 0..fd.len() {
                worst = worst.max((fd[r] - d2[(r, k)]).abs() / d2[(r, k)].abs().max(1.0));
            }
        }
    }
    outcome(worst <= 1e-6, format!("100 instances, max relative error {worst:.1e}"))
}

fn reductions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    let mut fits_ok = true;
    for seed in 0..20 {
        let a0 = rng.random_range(0.01..0.3);
        let theta: Vec<f64> = (0..=5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x: Vec<u8> = (0..5).map(|p| u8::from(p >= 2)).collect();
        let sizes: Vec<u64> = (0..5).map(|_| rng.random_range(1..=100)).collect();
        let (mu, _, _) = cluster_mean(&theta, Link::Logit, &x);
        let ex = induced_covariance(&mu, &sizes, &CorrelationParams::Exchangeable { alpha0: a0 }).unwrap();
        for other in [
            CorrelationParams::NestedExchangeable { alpha0: a0, alpha1: a0 },
            CorrelationParams::ExponentialDecay { alpha0: a0, rho: 1.0 },
        ] {
            let v = induced_covariance(&mu, &sizes, &other).unwrap();
            worst = worst.max((&v.v1 - &ex.v1).amax()).max((&v.eta - &ex.eta).amax());
        }

        let data = common::simulated(8, 5, CorrelationParams::Exchangeable { alpha0: 0.1 }, 20, 60, seed);
        let spec = |s, c: Option<Constraint>| {
            let m = ModelSpec::new(s, Adjustment::Maee);
            c.map_or(m.clone(), |c| m.with_constraint(c))
        };
        let exch = fit(&data, &spec(Structure::Exchangeable, None));
        let nec = fit(&data, &spec(Structure::NestedExchangeable, Some(Constraint::EqualIccs)));
        let edc = fit(&data, &spec(Structure::ExponentialDecay, Some(Constraint::UnitDecay)));
        match (exch, nec, edc) {
            (Ok(e), Ok(n), Ok(d)) if e.converged && n.converged && d.converged => {
                for o in [&n, &d] {
                    worst = worst
                        .max(common::max_abs_diff(&e.theta, &o.theta))
                        .max((e.alpha.alpha0() - o.alpha.alpha0()).abs());
                }
            }
            _ => fits_ok = false,
        }
    }
    outcome(worst <= 1e-10 && fits_ok, format!("20 fixtures, max difference {worst:.1e}"))
}

fn run_cli(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_swgee"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn determinism() -> Outcome {
    let sim = |t: &str| run_cli(&["simulate", "--preset", "table2-ne-small", "--replicates", "40", "--seed", "1", "--threads", t]);
    let are = |t: &str| {
        run_cli(&["are", "--design", "staircase", "22", "5", "--alpha0", "0.1", "--alpha1", "0.05", "-K", "100", "--seed", "1", "--threads", t])
    };
    let sim_same = sim("1") == sim("4");
    let are_same = are("1") == are("4");
    outcome(sim_same && are_same, format!("simulate identical: {sim_same}, are identical: {are_same}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("cluster-period and individual-level equations agree", oracle_identity),
        ("nested exchangeable bias, 12 clusters", ne_bias),
        ("exponential decay bias, 24 clusters", ed_bias),
        ("BC1 t-interval coverage for delta", bc1_coverage),
        ("relative efficiency of working independence", relative_efficiency),
        ("correlated binary generator moments", generator_moments),
        ("closed-form correlation updates", closed_forms),
        ("Jacobians against finite differences", jacobians),
        ("structure reductions", reductions),
        ("output independent of thread count", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        if !result.passed {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} — {name}: {} [{:.1} s]",
            k + 1,
            if result.passed { "PASS" } else { "FAIL" },
            result.detail,
            secs(start.elapsed())
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
