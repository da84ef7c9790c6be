//! Conditional linear family sampler for correlated binary vectors.
//!
//! Component `t` is Bernoulli with mean `mu_t + b_t' (y_<t - mu_<t)`, where
//! `b_t` is the best linear predictor coefficient from the leading block of
//! the covariance matrix.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::correlation::{CorrelationParams, INDIVIDUAL_GUARD};
use crate::error::{Result, SwgeeError};

/// Conditional means within this distance of `[0, 1]` are clamped.
pub const FEASIBILITY_SLACK: f64 = 1e-9;
const PIVOT_TOLERANCE: f64 = 1e-12;

fn conditional_probability(index: usize, lambda: f64) -> Result<f64> {
    if lambda < -FEASIBILITY_SLACK || lambda > 1.0 + FEASIBILITY_SLACK || !lambda.is_finite() {
        return Err(SwgeeError::Feasibility { index, value: lambda });
    }
    Ok(lambda.clamp(0.0, 1.0))
}

/// Lower Cholesky factor of a positive semidefinite matrix; columns whose
/// pivot vanishes are zeroed (the component is then a linear function of
/// earlier ones).
fn semidefinite_cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -PIVOT_TOLERANCE * a[(j, j)].abs().max(1.0) {
            return Err(SwgeeError::InfeasibleParameters {
                cluster: None,
                message: format!("correlation matrix is not positive semidefinite at index {j}"),
            });
        }
        if d <= PIVOT_TOLERANCE * a[(j, j)].abs() {
            continue;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    Ok(l)
}

/// Draws one binary vector with the given marginal means and correlation
/// matrix, using a dense factorization.
pub fn qaqish_sample<R: Rng>(means: &[f64], corr: &DMatrix<f64>, rng: &mut R) -> Result<Vec<u8>> {
    let n = means.len();
    if corr.nrows() != n || corr.ncols() != n {
        return Err(SwgeeError::InvalidConfig("correlation matrix does not match the means".into()));
    }
    if n > INDIVIDUAL_GUARD {
        return Err(SwgeeError::OracleScale { size: n, limit: INDIVIDUAL_GUARD });
    }
    if let Some(&m) = means.iter().find(|&&m| !(m > 0.0 && m < 1.0)) {
        return Err(SwgeeError::InvalidConfig(format!("mean {m} not in (0, 1)")));
    }
    let sd: Vec<f64> = means.iter().map(|m| (m * (1.0 - m)).sqrt()).collect();
    let cov = DMatrix::from_fn(n, n, |i, j| corr[(i, j)] * sd[i] * sd[j]);
    let l = semidefinite_cholesky(&cov)?;
    let mut z = DVector::zeros(n);
    let mut y = Vec::with_capacity(n);
    for t in 0..n {
        let mut lambda = means[t];
        for s in 0..t {
            lambda += l[(t, s)] * z[s];
        }
        let p = conditional_probability(t, lambda)?;
        let yt = u8::from(rng.random::<f64>() < p);
        y.push(yt);
        if l[(t, t)] > 0.0 {
            let mut v = f64::from(yt) - means[t];
            for s in 0..t {
                v -= l[(t, s)] * z[s];
            }
            z[t] = v / l[(t, t)];
        }
    }
    Ok(y)
}

/// Draws the individual outcomes of one cluster whose members are grouped
/// by period, exploiting the block structure of the correlation: the
/// predictor depends on earlier outcomes only through per-period residual
/// sums. Returns the per-period totals.
pub fn structured_cluster_sample<R: Rng>(
    means: &[f64],
    sizes: &[u64],
    params: &CorrelationParams,
    rng: &mut R,
) -> Result<Vec<u64>> {
    let periods = means.len();
    if sizes.len() != periods {
        return Err(SwgeeError::InvalidConfig("means and sizes differ in length".into()));
    }
    params.check()?;
    let v: Vec<f64> = means.iter().map(|m| m * (1.0 - m)).collect();
    let a0 = params.alpha0();
    let r = |g: usize, h: usize| if g == h { a0 } else { params.between(g, h) };
    // residual sums and counts of outcomes drawn so far, per period
    let mut sums = vec![0.0; periods];
    let mut counts = vec![0u64; periods];
    let mut totals = vec![0u64; periods];
    let mut index = 0usize;
    for g in 0..periods {
        for _ in 0..sizes[g] {
            let active: Vec<usize> = (0..=g).filter(|&h| counts[h] > 0).collect();
            let mut lambda = means[g];
            if !active.is_empty() && v[g] > 0.0 {
                let k = active.len();
                let gram = DMatrix::from_fn(k, k, |a, b| {
                    let (h, h2) = (active[a], active[b]);
                    let (m, m2) = (counts[h] as f64, counts[h2] as f64);
                    if a == b {
                        m * v[h] * (1.0 + (m - 1.0) * a0)
                    } else {
                        m * m2 * (v[h] * v[h2]).sqrt() * r(h, h2)
                    }
                });
                let c = DVector::from_fn(k, |a, _| {
                    let h = active[a];
                    counts[h] as f64 * (v[g] * v[h]).sqrt() * r(g, h)
                });
                let w = solve_psd(gram, c, index)?;
                lambda += active.iter().zip(w.iter()).map(|(&h, wh)| wh * sums[h]).sum::<f64>();
            }
            let p = conditional_probability(index, lambda)?;
            let y = u8::from(rng.random::<f64>() < p);
            sums[g] += f64::from(y) - means[g];
            counts[g] += 1;
            totals[g] += u64::from(y);
            index += 1;
        }
    }
    Ok(totals)
}

fn solve_psd(gram: DMatrix<f64>, c: DVector<f64>, index: usize) -> Result<DVector<f64>> {
    if let Some(ch) = gram.clone().cholesky() {
        return Ok(ch.solve(&c));
    }
    // singular Gram matrix: residual sums are linearly dependent
    gram.svd(true, true).solve(&c, 1e-12).map_err(|_| SwgeeError::Feasibility {
        index,
        value: f64::NAN,
    })
}
