//! Experiment runners: posterior accuracy on grids, the interaction-strength
//! sweep and the chain CRF.

mod crf;
mod mrf;

pub use crf::{crf_corpus, cross_validate_map, random_crf, run_crf_experiment, PredictionRecord};
pub use mrf::{
    draw_samples, exact_covariance, interval_spin_model, random_spin_model, run_grid_experiment,
    run_strength_sweep, SAMPLE_METHODS,
};

use bethe_core::bp::BpOptions;
use bethe_core::posterior::sample_posterior_stream;
use bethe_core::samplers::{mpsrf, thin_and_pool, Chain};
use bethe_core::{cvm_score, GaussianPosterior, ParameterSampleSet, Provenance};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind};

/// Method label of the ground truth scored against its own replicate.
pub const SELF_SCORE: &str = "gt-self";

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Ok,
    /// Scored, with a convergence or numerical warning in the notes.
    Flagged,
    Failed(String),
}

impl Status {
    pub fn label(&self) -> &str {
        match self {
            Status::Ok => "ok",
            Status::Flagged => "flagged",
            Status::Failed(_) => "failed",
        }
    }
}

/// One (model, method, N or d) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub model: usize,
    pub method: String,
    pub x: f64,
    /// One score per sample set; empty when the cell failed.
    pub scores: Vec<f64>,
    pub status: Status,
    pub notes: Vec<String>,
    pub bp_failures: usize,
    pub mpsrf: Option<f64>,
    pub wall_seconds: f64,
}

impl Cell {
    fn failed(model: usize, method: &str, x: f64, reason: String) -> Cell {
        Cell {
            model,
            method: method.to_string(),
            x,
            scores: Vec::new(),
            status: Status::Failed(reason),
            notes: Vec::new(),
            bp_failures: 0,
            mpsrf: None,
            wall_seconds: 0.0,
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self.status, Status::Failed(_))
    }

    pub fn mean(&self) -> Option<f64> {
        mean_se(&self.scores).map(|(m, _)| m)
    }
}

/// Qualitative check recorded in the report.
#[derive(Debug, Clone, PartialEq)]
pub struct Trend {
    pub name: String,
    pub value: f64,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub settings: String,
    /// Column name of the swept quantity: `n` or `d`.
    pub x_name: &'static str,
    pub cells: Vec<Cell>,
    pub trends: Vec<Trend>,
    pub predictions: Vec<PredictionRecord>,
}

impl ExperimentReport {
    pub fn any_failed(&self) -> bool {
        self.cells.iter().any(Cell::is_failed)
    }

    pub fn cell(&self, model: usize, method: &str, x: f64) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.model == model && c.method == method && c.x == x)
    }

    pub fn trend(&self, name: &str) -> Option<&Trend> {
        self.trends.iter().find(|t| t.name == name)
    }

    pub fn xs(&self) -> Vec<f64> {
        let mut xs: Vec<f64> = self.cells.iter().map(|c| c.x).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs
    }

    /// Scores of `method` at `x` averaged over models set by set, with the
    /// mean and standard error over sets. `None` when any model failed.
    pub fn model_average(&self, method: &str, x: f64) -> Option<(f64, f64)> {
        let cells: Vec<&Cell> = self
            .cells
            .iter()
            .filter(|c| c.method == method && c.x == x)
            .collect();
        if cells.is_empty() || cells.iter().any(|c| c.is_failed()) {
            return None;
        }
        let sets = cells.iter().map(|c| c.scores.len()).min()?;
        let per_set: Vec<f64> = (0..sets)
            .map(|k| cells.iter().map(|c| c.scores[k]).sum::<f64>() / cells.len() as f64)
            .collect();
        mean_se(&per_set)
    }
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Some((mean, (var / n as f64).sqrt()))
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub(crate) fn bp_options(cfg: &ExperimentConfig) -> BpOptions {
    BpOptions {
        max_iters: cfg.bp_max_iters,
        tol: cfg.bp_tol,
        damping: cfg.bp_damping,
        ..BpOptions::default()
    }
}

/// `count` sets of `size` draws from a Gaussian posterior, one generator
/// stream per set.
pub(crate) fn gaussian_sets(
    posterior: &GaussianPosterior,
    count: usize,
    size: usize,
    seed: u64,
    method: &str,
) -> bethe_core::Result<Vec<ParameterSampleSet>> {
    (0..count)
        .map(|k| {
            let mut set = sample_posterior_stream(posterior, size, seed, k as u64)?;
            set.provenance.method = method.to_string();
            Ok(set)
        })
        .collect()
}

/// Consecutive blocks of `size` rows.
pub(crate) fn split_sets(
    pool: &ParameterSampleSet,
    count: usize,
    size: usize,
) -> bethe_core::Result<Vec<ParameterSampleSet>> {
    let dim = pool.dim();
    (0..count)
        .map(|k| {
            let rows = &pool.as_flat()[k * size * dim..(k + 1) * size * dim];
            ParameterSampleSet::new(dim, rows.to_vec(), pool.provenance.clone())
        })
        .collect()
}

pub(crate) fn pairwise_scores(
    a: &[ParameterSampleSet],
    b: &[ParameterSampleSet],
) -> bethe_core::Result<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| cvm_score(x, y).map(|r| r.total))
        .collect()
}

/// Langevin step `lv_step · √(smallest posterior eigenvalue)`, which keeps
/// the stiffest direction stable.
pub(crate) fn langevin_step(cfg: &ExperimentConfig, posterior: &GaussianPosterior) -> f64 {
    let min = posterior
        .covariance
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .min();
    cfg.lv_step * min.max(0.0).sqrt()
}

/// Starting points drawn from the posterior with deviations doubled.
pub(crate) fn dispersed_inits(
    posterior: &GaussianPosterior,
    count: usize,
    seed: u64,
) -> bethe_core::Result<Vec<Vec<f64>>> {
    let draws = sample_posterior_stream(posterior, count, seed, u64::MAX)?;
    Ok(draws
        .rows()
        .map(|r| {
            r.iter()
                .zip(&posterior.mean)
                .map(|(x, m)| m + 2.0 * (x - m))
                .collect()
        })
        .collect())
}

/// Pooled output of several restarts of one sampler.
#[derive(Debug, Clone)]
pub(crate) struct PooledRun {
    pub pool: ParameterSampleSet,
    pub mpsrf: f64,
    pub converged: bool,
    /// The pool was spaced below the autocorrelation time to reach its size.
    pub under_thinned: bool,
    pub bp_failures: usize,
}

impl PooledRun {
    pub fn notes(&self) -> Vec<String> {
        let mut notes = vec![
            format!("mpsrf={:.4}", self.mpsrf),
            format!("thin={}", self.pool.provenance.thinning),
        ];
        if !self.converged {
            notes.push("unconverged".into());
        }
        if self.under_thinned {
            notes.push("under-thinned".into());
        }
        if self.bp_failures > 0 {
            notes.push(format!("bp-failures={}", self.bp_failures));
        }
        notes
    }
}

pub(crate) struct Gate {
    pub chains: usize,
    pub threshold: f64,
    /// Doublings of the chain length allowed when MPSRF exceeds the threshold.
    pub extensions: usize,
    /// Lengthen the chains when thinning leaves too few samples.
    pub resize: bool,
}

/// Runs `gate.chains` restarts of `run(chain, iterations)`, checks MPSRF and
/// pools `needed` samples thinned at the autocorrelation time.
pub(crate) fn run_pooled<F>(
    run: F,
    gate: &Gate,
    needed: usize,
    mut iterations: usize,
) -> bethe_core::Result<PooledRun>
where
    F: Fn(usize, usize) -> bethe_core::Result<Chain> + Sync,
{
    let (mut doublings, mut resizes) = (0, 0);
    loop {
        let chains: Vec<Chain> = (0..gate.chains)
            .into_par_iter()
            .map(|c| run(c, iterations))
            .collect::<bethe_core::Result<_>>()?;
        let r = mpsrf(&chains).unwrap_or(f64::INFINITY);
        let converged = r <= gate.threshold;
        let (pool, _) = thin_and_pool(&chains, needed)?;
        let short = pool.len() < needed;
        if !converged && doublings < gate.extensions {
            doublings += 1;
            iterations *= 2;
            continue;
        }
        if converged && short && gate.resize && resizes < 2 {
            resizes += 1;
            iterations *= needed.div_ceil(pool.len().max(1)).max(2);
            continue;
        }
        let bp_failures = chains.iter().map(|c| c.bp_failures).sum();
        let pool = if short {
            even_pool(&chains, needed)?
        } else {
            pool
        };
        return Ok(PooledRun {
            pool,
            mpsrf: r,
            converged,
            under_thinned: short,
            bp_failures,
        });
    }
}

/// Pools `needed` states spaced evenly from the end of every chain.
fn even_pool(chains: &[Chain], needed: usize) -> bethe_core::Result<ParameterSampleSet> {
    let share = needed.div_ceil(chains.len());
    let len = chains.iter().map(Chain::len).min().unwrap_or(0);
    if len < share {
        return Err(bethe_core::Error::InvalidArgument(format!(
            "chains of {len} states cannot supply {needed} samples"
        )));
    }
    let thin = len / share;
    let dim = chains[0].dim;
    let mut data = Vec::with_capacity(needed * dim);
    for c in chains {
        for t in (0..share).rev() {
            data.extend_from_slice(c.state(c.len() - 1 - t * thin));
        }
    }
    data.truncate(needed * dim);
    ParameterSampleSet::new(
        dim,
        data,
        Provenance {
            method: chains[0].method.clone(),
            seed: chains[0].seed,
            thinning: thin * chains[0].thin,
        },
    )
}

/// Ground truth, its replicate and the self-score for one problem.
pub(crate) struct Reference {
    pub sets: Vec<ParameterSampleSet>,
    pub self_cell: Cell,
}
