//! Posterior targets over the parameters of a binary pairwise MRF.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{GradLogDensity, GradientEstimator, LogDensity};
use crate::bp::{bethe_free_energy, run_sum_product_from, BpOptions};
use crate::exact::{has_exact_backend, log_z, log_z_and_kappa};
use crate::graph::{Dataset, GaussianPrior, Graph, PairwiseBinaryModel};
use crate::math::{dot, sigmoid};
use crate::{Error, Result};

fn checked_parts(
    graph: &Graph,
    dataset: &Dataset,
    prior: &GaussianPrior,
) -> Result<(PairwiseBinaryModel, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let f = graph.feature_count();
    if !prior.dimension_matches(f) {
        return Err(Error::LengthMismatch {
            what: "prior dimension",
            expected: f,
            actual: 0,
        });
    }
    let sums = dataset.feature_sum(graph)?;
    Ok((PairwiseBinaryModel::zeros(graph.clone()), sums))
}

/// `λᵀΣ_n f(x_n) - N log Z(λ) + log p(λ)` with exact `log Z`.
#[derive(Debug, Clone)]
pub struct MrfExactPosterior {
    model: PairwiseBinaryModel,
    sums: Vec<f64>,
    n: f64,
    prior: GaussianPrior,
}

impl MrfExactPosterior {
    pub fn new(graph: &Graph, dataset: &Dataset, prior: &GaussianPrior) -> Result<Self> {
        if !has_exact_backend(graph) {
            return Err(Error::TooLarge {
                what: "graph for exact inference",
                size: graph.node_count(),
                limit: crate::exact::BRUTE_LOG_Z_LIMIT,
            });
        }
        let (model, sums) = checked_parts(graph, dataset, prior)?;
        Ok(MrfExactPosterior {
            model,
            sums,
            n: dataset.len() as f64,
            prior: prior.clone(),
        })
    }
}

impl LogDensity for MrfExactPosterior {
    fn dim(&self) -> usize {
        self.sums.len()
    }

    fn log_density(&mut self, x: &[f64]) -> Result<Option<f64>> {
        let lz = log_z(&self.model.with_lambda(x))?;
        Ok(Some(
            dot(x, &self.sums) - self.n * lz + self.prior.log_density_unnormalized(x),
        ))
    }
}

impl GradLogDensity for MrfExactPosterior {
    fn log_density_and_grad(&mut self, x: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
        let (lz, kappa) = log_z_and_kappa(&self.model.with_lambda(x))?;
        let pull = self.prior.precision_mul(x);
        let value = dot(x, &self.sums) - self.n * lz - 0.5 * dot(x, &pull);
        let grad = self
            .sums
            .iter()
            .zip(&kappa)
            .zip(&pull)
            .map(|((s, k), p)| s - self.n * k - p)
            .collect();
        Ok(Some((value, grad)))
    }
}

/// `λᵀΣ_n f(x_n) + N F_Bethe(λ) + log p(λ)`. BP runs are warm-started from the
/// messages of the last accepted point.
#[derive(Debug, Clone)]
pub struct MrfBethePosterior {
    model: PairwiseBinaryModel,
    sums: Vec<f64>,
    n: f64,
    prior: GaussianPrior,
    bp_options: BpOptions,
    current: Option<Vec<f64>>,
    pending: Option<Vec<f64>>,
    failures: usize,
}

impl MrfBethePosterior {
    pub fn new(
        graph: &Graph,
        dataset: &Dataset,
        prior: &GaussianPrior,
        bp_options: BpOptions,
    ) -> Result<Self> {
        let (model, sums) = checked_parts(graph, dataset, prior)?;
        Ok(MrfBethePosterior {
            model,
            sums,
            n: dataset.len() as f64,
            prior: prior.clone(),
            bp_options,
            current: None,
            pending: None,
            failures: 0,
        })
    }
}

impl LogDensity for MrfBethePosterior {
    fn dim(&self) -> usize {
        self.sums.len()
    }

    fn log_density(&mut self, x: &[f64]) -> Result<Option<f64>> {
        let m = self.model.with_lambda(x);
        let bp = run_sum_product_from(&m, &self.bp_options, self.current.as_deref())?;
        if !bp.converged {
            self.failures += 1;
            return Ok(None);
        }
        let Ok(free_energy) = bethe_free_energy(&m, &bp.beliefs) else {
            self.failures += 1;
            return Ok(None);
        };
        self.pending = Some(bp.messages);
        Ok(Some(
            dot(x, &self.sums) + self.n * free_energy + self.prior.log_density_unnormalized(x),
        ))
    }

    fn accepted(&mut self) {
        if let Some(m) = self.pending.take() {
            self.current = Some(m);
        }
    }

    fn failures(&self) -> usize {
        self.failures
    }
}

/// CD-k gradient: the model expectation is replaced by the feature sum after
/// `k` Gibbs sweeps started from each data case.
#[derive(Debug, Clone)]
pub struct MrfCdGradient {
    model: PairwiseBinaryModel,
    dataset: Dataset,
    sums: Vec<f64>,
    prior: GaussianPrior,
    sweeps: usize,
}

impl MrfCdGradient {
    pub fn new(
        graph: &Graph,
        dataset: &Dataset,
        prior: &GaussianPrior,
        sweeps: usize,
    ) -> Result<Self> {
        if sweeps == 0 {
            return Err(Error::InvalidArgument(
                "CD needs at least one Gibbs sweep".into(),
            ));
        }
        let (model, sums) = checked_parts(graph, dataset, prior)?;
        Ok(MrfCdGradient {
            model,
            dataset: dataset.clone(),
            sums,
            prior: prior.clone(),
            sweeps,
        })
    }
}

/// One in-place Gibbs sweep over the nodes in index order.
pub(crate) fn gibbs_sweep(model: &PairwiseBinaryModel, x: &mut [u8], rng: &mut ChaCha8Rng) {
    let graph = model.graph();
    for i in 0..graph.node_count() {
        let field = model.theta()[i]
            + graph
                .neighbors(i)
                .iter()
                .map(|nb| model.w()[nb.edge] * f64::from(x[nb.node]))
                .sum::<f64>();
        x[i] = u8::from(rng.random::<f64>() < sigmoid(field));
    }
}

impl GradientEstimator for MrfCdGradient {
    fn dim(&self) -> usize {
        self.sums.len()
    }

    fn estimate(&mut self, x: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let model = self.model.with_lambda(x);
        let graph = model.graph();
        let n = graph.node_count();
        let mut negative = vec![0.0; self.sums.len()];
        let mut buf = vec![0u8; n];
        for row in self.dataset.iter() {
            buf.copy_from_slice(row);
            for _ in 0..self.sweeps {
                gibbs_sweep(&model, &mut buf, rng);
            }
            for (i, &b) in buf.iter().enumerate() {
                negative[i] += f64::from(b);
            }
            for (e, &(i, j)) in graph.edges().iter().enumerate() {
                negative[n + e] += f64::from(buf[i] & buf[j]);
            }
        }
        let pull = self.prior.precision_mul(x);
        Ok(self
            .sums
            .iter()
            .zip(&negative)
            .zip(&pull)
            .map(|((s, c), p)| s - c - p)
            .collect())
    }
}
