//! Chain convergence and mixing diagnostics.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::Chain;
use crate::posterior::{ParameterSampleSet, Provenance};
use crate::{Error, Result};

/// Brooks–Gelman multivariate potential scale reduction factor.
pub fn mpsrf(chains: &[Chain]) -> Result<f64> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::InvalidArgument(
            "MPSRF needs at least two chains".into(),
        ));
    }
    let (t, dim) = (chains[0].len(), chains[0].dim);
    if chains.iter().any(|c| c.len() != t || c.dim != dim) {
        return Err(Error::InvalidArgument(
            "MPSRF needs chains of equal length and dimension".into(),
        ));
    }
    if t < 10 {
        return Err(Error::InvalidArgument(
            "MPSRF needs at least 10 states per chain".into(),
        ));
    }
    let means: Vec<DVector<f64>> = chains.iter().map(|c| DVector::from_vec(c.mean())).collect();
    let grand = means.iter().fold(DVector::zeros(dim), |a, b| a + b) / m as f64;
    let mut w = DMatrix::<f64>::zeros(dim, dim);
    for (c, mean) in chains.iter().zip(&means) {
        for r in c.rows() {
            let d = DVector::from_column_slice(r) - mean;
            w += &d * d.transpose();
        }
    }
    w /= (m * (t - 1)) as f64;
    let mut b_over_t = DMatrix::<f64>::zeros(dim, dim);
    for mean in &means {
        let d = mean - &grand;
        b_over_t += &d * d.transpose();
    }
    b_over_t /= (m - 1) as f64;
    let chol = w
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("within-chain covariance is singular".into()))?;
    // eigenvalues of W⁻¹B/T equal those of L⁻¹ (B/T) L⁻ᵀ
    let l = chol.l();
    let li = l
        .solve_lower_triangular(&DMatrix::identity(dim, dim))
        .ok_or(Error::Singular(f64::INFINITY))?;
    let mut s = &li * b_over_t * li.transpose();
    crate::math::symmetrize(&mut s);
    let lambda_max = crate::math::symmetric_eigenvalues(&s).max();
    let t = t as f64;
    Ok((t - 1.0) / t + (m as f64 + 1.0) / m as f64 * lambda_max)
}

/// Sample autocorrelation at `lag`, normalized by the lag-0 autocovariance.
pub fn lag_autocorrelation(series: &[f64], lag: usize) -> f64 {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let c0: f64 = series.iter().map(|x| (x - mean) * (x - mean)).sum();
    let ct: f64 = (0..n.saturating_sub(lag))
        .map(|s| (series[s] - mean) * (series[s + lag] - mean))
        .sum();
    ct / c0
}

/// Integrated autocorrelation time `1 + 2 Σ ρ_t`, truncated by Geyer's
/// initial positive sequence.
pub fn autocorr_time(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 100 {
        return Err(Error::InvalidArgument(
            "autocorrelation time needs at least 100 states".into(),
        ));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0: f64 = centered.iter().map(|x| x * x).sum();
    if !(c0 > 0.0) {
        return Err(Error::Degenerate("constant series".into()));
    }
    let rho = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / c0
    };
    let mut sum = 0.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let gamma = if k == 0 { 1.0 } else { rho(2 * k) } + rho(2 * k + 1);
        if gamma <= 0.0 {
            break;
        }
        sum += gamma;
        k += 1;
    }
    Ok((2.0 * sum - 1.0).max(1.0))
}

pub fn chain_autocorr_time(chain: &Chain, dim: usize) -> Result<f64> {
    autocorr_time(&chain.column(dim))
}

/// Thins every chain at `⌈τ⌉`, with `τ` the largest autocorrelation time over
/// chains and coordinates, and pools up to `n` samples taking an equal share
/// from the end of each chain. Returns the pool and the thinning interval.
pub fn thin_and_pool(chains: &[Chain], n: usize) -> Result<(ParameterSampleSet, usize)> {
    let first = chains
        .first()
        .ok_or_else(|| Error::InvalidArgument("no chains to pool".into()))?;
    let dim = first.dim;
    let mut tau = 1.0f64;
    for c in chains {
        for k in 0..dim {
            if let Ok(t) = chain_autocorr_time(c, k) {
                tau = tau.max(t);
            }
        }
    }
    let thin = tau.ceil() as usize;
    let share = n.div_ceil(chains.len());
    let mut data = Vec::with_capacity(n * dim);
    for c in chains {
        let rows: Vec<&[f64]> = c.rows().step_by(thin).collect();
        let start = rows.len().saturating_sub(share);
        for r in &rows[start..] {
            data.extend_from_slice(r);
        }
    }
    data.truncate(n * dim);
    let set = ParameterSampleSet::new(
        dim,
        data,
        Provenance {
            method: first.method.clone(),
            seed: first.seed,
            thinning: thin * first.thin,
        },
    )?;
    Ok((set, thin))
}
