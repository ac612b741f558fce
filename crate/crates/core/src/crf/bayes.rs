//! MAP fitting, the Gaussian posterior over tied weights, posterior samplers
//! and a synthetic corpus generator.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    case_covariance, forward_backward, marginals_from_fields, tied_features, tied_from_statistics,
    ChainCrfModel, Sequence, SequenceDataset,
};
use crate::graph::GaussianPrior;
use crate::math::{dot, log_add_exp, sigmoid};
use crate::optimize::{maximize, AscentOptions};
use crate::posterior::{assemble_posterior, GaussianPosterior};
use crate::samplers::{
    langevin, random_walk_mh, Chain, ExactGradient, GradLogDensity, GradientEstimator,
    LangevinOptions, LogDensity, MhOptions,
};
use crate::{Error, Result};

fn labelled_parts(dataset: &SequenceDataset, prior: &GaussianPrior) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = 2 * dataset.width();
    if !prior.dimension_matches(dim) {
        return Err(Error::LengthMismatch {
            what: "prior dimension",
            expected: dim,
            actual: 0,
        });
    }
    let mut sums = vec![0.0; dim];
    for seq in dataset.iter() {
        let labels = seq
            .labels()
            .ok_or_else(|| Error::InvalidArgument("training sequence has no labels".into()))?;
        for (s, f) in sums.iter_mut().zip(tied_features(seq, labels)?) {
            *s += f;
        }
    }
    Ok(sums)
}

/// `Σ_n log Z(λ, x_n)` and `Σ_n E[f | x_n]`.
fn log_z_and_kappa_sum(
    model: &ChainCrfModel,
    dataset: &SequenceDataset,
) -> Result<(f64, Vec<f64>)> {
    let mut log_z = 0.0;
    let mut kappa = vec![0.0; model.weights().len()];
    for seq in dataset.iter() {
        let (h, j) = model.fields(seq)?;
        let m = marginals_from_fields(&h, &j);
        log_z += m.log_z;
        for (k, e) in kappa
            .iter_mut()
            .zip(tied_from_statistics(seq, &m.statistics()))
        {
            *k += e;
        }
    }
    Ok((log_z, kappa))
}

/// Per-case objective `(1/N)[Σ_n log p(t_n | x_n, λ) + log p(λ)]` and its gradient.
pub fn crf_objective(
    weights: &[f64],
    dataset: &SequenceDataset,
    prior: &GaussianPrior,
) -> Result<(f64, Vec<f64>)> {
    let sums = labelled_parts(dataset, prior)?;
    let model = ChainCrfModel::new(dataset.width(), weights.to_vec())?;
    objective_from_sums(&model, dataset, prior, &sums)
}

fn objective_from_sums(
    model: &ChainCrfModel,
    dataset: &SequenceDataset,
    prior: &GaussianPrior,
    sums: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let x = model.weights();
    let n = dataset.len() as f64;
    let (log_z, kappa) = log_z_and_kappa_sum(model, dataset)?;
    let pull = prior.precision_mul(x);
    let value = (dot(x, sums) - log_z - 0.5 * dot(x, &pull)) / n;
    let grad = sums
        .iter()
        .zip(&kappa)
        .zip(&pull)
        .map(|((s, k), p)| (s - k - p) / n)
        .collect();
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfFitOptions {
    pub max_iters: usize,
    /// Stop once every gradient component of the per-case objective is below this.
    pub grad_tol: f64,
    pub initial_step: f64,
    /// Starting weights; zeros when `None`.
    pub init: Option<Vec<f64>>,
}

impl Default for CrfFitOptions {
    fn default() -> Self {
        CrfFitOptions {
            max_iters: 500,
            grad_tol: 1e-8,
            initial_step: 0.1,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfFitResult {
    pub weights: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

impl CrfFitResult {
    pub fn model(&self) -> ChainCrfModel {
        ChainCrfModel {
            width: self.weights.len() / 2,
            weights: self.weights.clone(),
        }
    }
}

/// Maximizes the penalized conditional log-likelihood with exact gradients.
pub fn crf_fit_map(
    dataset: &SequenceDataset,
    prior: &GaussianPrior,
    options: &CrfFitOptions,
) -> Result<CrfFitResult> {
    if options.max_iters == 0 || !(options.grad_tol > 0.0) || !(options.initial_step > 0.0) {
        return Err(Error::InvalidArgument("invalid CRF fit options".into()));
    }
    let sums = labelled_parts(dataset, prior)?;
    let width = dataset.width();
    let init = match &options.init {
        Some(x) if x.len() == 2 * width => x.clone(),
        Some(x) => {
            return Err(Error::LengthMismatch {
                what: "initial weights",
                expected: 2 * width,
                actual: x.len(),
            })
        }
        None => vec![0.0; 2 * width],
    };
    let ascent = AscentOptions {
        max_iters: options.max_iters,
        grad_tol: options.grad_tol,
        initial_step: options.initial_step,
    };
    let result = maximize(init, &ascent, |x| {
        let model = ChainCrfModel {
            width,
            weights: x.to_vec(),
        };
        objective_from_sums(&model, dataset, prior, &sums).map(Some)
    })?;
    Ok(CrfFitResult {
        weights: result.x,
        grad_norm: result.grad_norm,
        iterations: result.iterations,
        converged: result.converged,
        objective: result.value,
    })
}

/// Average over sequences of the exact tied covariance `C_x`.
pub fn mean_case_covariance(
    model: &ChainCrfModel,
    dataset: &SequenceDataset,
) -> Result<DMatrix<f64>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = model.weights().len();
    let mut c = DMatrix::zeros(dim, dim);
    for seq in dataset.iter() {
        c += case_covariance(model, seq)?;
    }
    Ok(c / dataset.len() as f64)
}

/// `N(λ^MP, Σ)` with `Σ⁻¹ = Σ_n C_{x_n} + Λ⁻¹`.
pub fn crf_posterior(
    weights: &[f64],
    dataset: &SequenceDataset,
    prior: &GaussianPrior,
) -> Result<GaussianPosterior> {
    let model = ChainCrfModel::new(dataset.width(), weights.to_vec())?;
    let c = mean_case_covariance(&model, dataset)?;
    assemble_posterior(weights, &c, prior, dataset.len())
}

/// Exact conditional posterior `Σ_n log p(t_n | x_n, λ) + log p(λ)`.
#[derive(Debug, Clone)]
pub struct CrfExactPosterior {
    dataset: SequenceDataset,
    sums: Vec<f64>,
    prior: GaussianPrior,
}

impl CrfExactPosterior {
    pub fn new(dataset: &SequenceDataset, prior: &GaussianPrior) -> Result<Self> {
        let sums = labelled_parts(dataset, prior)?;
        Ok(CrfExactPosterior {
            dataset: dataset.clone(),
            sums,
            prior: prior.clone(),
        })
    }

    fn model(&self, x: &[f64]) -> ChainCrfModel {
        ChainCrfModel {
            width: self.dataset.width(),
            weights: x.to_vec(),
        }
    }
}

impl LogDensity for CrfExactPosterior {
    fn dim(&self) -> usize {
        self.sums.len()
    }

    fn log_density(&mut self, x: &[f64]) -> Result<Option<f64>> {
        let model = self.model(x);
        let mut log_z = 0.0;
        for seq in self.dataset.iter() {
            log_z += forward_backward(&model, seq)?.log_z;
        }
        Ok(Some(
            dot(x, &self.sums) - log_z + self.prior.log_density_unnormalized(x),
        ))
    }
}

impl GradLogDensity for CrfExactPosterior {
    fn log_density_and_grad(&mut self, x: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
        let n = self.dataset.len() as f64;
        let (v, g) = objective_from_sums(&self.model(x), &self.dataset, &self.prior, &self.sums)?;
        Ok(Some((v * n, g.iter().map(|gi| gi * n).collect())))
    }
}

/// CD-k gradient over labels: the model expectation is replaced by the
/// features after `k` Gibbs sweeps started at each training labelling.
#[derive(Debug, Clone)]
pub struct CrfCdGradient {
    dataset: SequenceDataset,
    sums: Vec<f64>,
    prior: GaussianPrior,
    sweeps: usize,
}

impl CrfCdGradient {
    pub fn new(dataset: &SequenceDataset, prior: &GaussianPrior, sweeps: usize) -> Result<Self> {
        if sweeps == 0 {
            return Err(Error::InvalidArgument(
                "CD needs at least one Gibbs sweep".into(),
            ));
        }
        let sums = labelled_parts(dataset, prior)?;
        Ok(CrfCdGradient {
            dataset: dataset.clone(),
            sums,
            prior: prior.clone(),
            sweeps,
        })
    }
}

fn gibbs_sweep(h: &[f64], j: &[f64], t: &mut [u8], rng: &mut ChaCha8Rng) {
    let l = t.len();
    for i in 0..l {
        let mut field = h[i];
        if i > 0 && t[i - 1] == 1 {
            field += j[i - 1];
        }
        if i + 1 < l && t[i + 1] == 1 {
            field += j[i];
        }
        t[i] = u8::from(rng.random::<f64>() < sigmoid(field));
    }
}

impl GradientEstimator for CrfCdGradient {
    fn dim(&self) -> usize {
        self.sums.len()
    }

    fn estimate(&mut self, x: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let model = ChainCrfModel {
            width: self.dataset.width(),
            weights: x.to_vec(),
        };
        let mut negative = vec![0.0; x.len()];
        for seq in self.dataset.iter() {
            let (h, j) = model.fields(seq)?;
            let mut t = seq.labels().map(<[u8]>::to_vec).unwrap_or_default();
            for _ in 0..self.sweeps {
                gibbs_sweep(&h, &j, &mut t, rng);
            }
            for (c, f) in negative.iter_mut().zip(tied_features(seq, &t)?) {
                *c += f;
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

/// Metropolis–Hastings on the exact CRF posterior.
pub fn crf_mh_exact(
    dataset: &SequenceDataset,
    prior: &GaussianPrior,
    options: &MhOptions,
) -> Result<Chain> {
    let mut target = CrfExactPosterior::new(dataset, prior)?;
    random_walk_mh(&mut target, options, "mh-exact")
}

/// Unadjusted Langevin on the CRF posterior with CD (or exact) gradients.
pub fn crf_langevin_cd(
    dataset: &SequenceDataset,
    prior: &GaussianPrior,
    options: &LangevinOptions,
) -> Result<Chain> {
    if options.exact_gradient {
        let mut target = CrfExactPosterior::new(dataset, prior)?;
        langevin(&mut ExactGradient(&mut target), options, "lv-exact")
    } else {
        let mut est = CrfCdGradient::new(dataset, prior, options.cd_sweeps)?;
        langevin(&mut est, options, "lv-cd")
    }
}

/// Exact draw from `p(t | x, λ)` by forward filtering, backward sampling.
pub fn sample_labels(model: &ChainCrfModel, seq: &Sequence, rng: &mut impl Rng) -> Result<Vec<u8>> {
    let (h, j) = model.fields(seq)?;
    let l = h.len();
    let mut alpha = Vec::with_capacity(l);
    alpha.push([0.0, h[0]]);
    for i in 1..l {
        let [a0, a1]: [f64; 2] = alpha[i - 1];
        alpha.push([log_add_exp(a0, a1), log_add_exp(a0, a1 + j[i - 1]) + h[i]]);
    }
    let mut t = vec![0u8; l];
    let draw = |rng: &mut dyn rand::RngCore, l0: f64, l1: f64| {
        u8::from(rng.random::<f64>() < sigmoid(l1 - l0))
    };
    t[l - 1] = draw(rng, alpha[l - 1][0], alpha[l - 1][1]);
    for i in (0..l - 1).rev() {
        let coupling = if t[i + 1] == 1 { j[i] } else { 0.0 };
        t[i] = draw(rng, alpha[i][0], alpha[i][1] + coupling);
    }
    Ok(t)
}

/// Unlabelled sequence whose feature 0 is always on and the rest are on
/// independently with probability `density`.
pub fn random_features(
    width: usize,
    len: usize,
    density: f64,
    rng: &mut impl Rng,
) -> Result<Sequence> {
    if width == 0 || len == 0 || !(0.0..=1.0).contains(&density) {
        return Err(Error::InvalidArgument(
            "invalid synthetic sequence shape".into(),
        ));
    }
    let mut features = Vec::with_capacity(width * len);
    for _ in 0..len {
        features.push(1);
        features.extend((1..width).map(|_| u8::from(rng.random::<f64>() < density)));
    }
    Sequence::new(width, features, None)
}

/// `n` sequences of length `len` with labels drawn exactly from `model`.
pub fn synthetic_corpus(
    model: &ChainCrfModel,
    n: usize,
    len: usize,
    density: f64,
    seed: u64,
) -> Result<SequenceDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sequences = Vec::with_capacity(n);
    for _ in 0..n {
        let seq = random_features(model.width(), len, density, &mut rng)?;
        let labels = sample_labels(model, &seq, &mut rng)?;
        sequences.push(seq.with_labels(Some(labels))?);
    }
    SequenceDataset::new(model.width(), sequences)
}
