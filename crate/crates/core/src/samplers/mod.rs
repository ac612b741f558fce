//! MCMC over parameter vectors.
//!
//! The generic kernels ([`hmc`], [`random_walk_mh`], [`langevin`]) work on any
//! target implementing the traits below. The MRF wrappers bind them to the
//! posterior `p(λ | D) ∝ exp(λᵀΣ_n f(x_n) - N log Z(λ)) p(λ)`, with `log Z`
//! exact, replaced by the Bethe free energy, or bypassed by a contrastive
//! divergence gradient.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bp::BpOptions;
use crate::graph::{Dataset, GaussianPrior, Graph};
use crate::posterior::{ParameterSampleSet, Provenance};
use crate::{Error, Result};

mod diagnostics;
mod targets;

pub use diagnostics::{
    autocorr_time, chain_autocorr_time, lag_autocorrelation, mpsrf, thin_and_pool,
};
pub use targets::{MrfBethePosterior, MrfCdGradient, MrfExactPosterior};

/// Unnormalized log-density. `None` marks a point where it cannot be
/// evaluated (e.g. BP did not converge); samplers reject such points.
pub trait LogDensity {
    fn dim(&self) -> usize;
    fn log_density(&mut self, x: &[f64]) -> Result<Option<f64>>;
    /// Called after the most recently evaluated point was accepted.
    fn accepted(&mut self) {}
    /// Number of evaluations that returned `None`.
    fn failures(&self) -> usize {
        0
    }
}

pub trait GradLogDensity: LogDensity {
    fn log_density_and_grad(&mut self, x: &[f64]) -> Result<Option<(f64, Vec<f64>)>>;
}

/// Possibly stochastic estimate of the gradient of a log-density.
pub trait GradientEstimator {
    fn dim(&self) -> usize;
    fn estimate(&mut self, x: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
}

/// Uses the exact gradient of a [`GradLogDensity`].
pub struct ExactGradient<'a, T: GradLogDensity>(pub &'a mut T);

impl<T: GradLogDensity> GradientEstimator for ExactGradient<'_, T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn estimate(&mut self, x: &[f64], _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.0
            .log_density_and_grad(x)?
            .map(|(_, g)| g)
            .ok_or_else(|| Error::Degenerate("gradient unavailable".into()))
    }
}

/// Sampled parameter vectors, `T × F` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub states: Vec<f64>,
    pub dim: usize,
    pub acceptance_rate: f64,
    pub method: String,
    pub seed: u64,
    /// Proposals rejected because the target could not be evaluated.
    pub bp_failures: usize,
    /// Largest finite `|ΔH|` seen by HMC; zero for other methods.
    pub max_energy_error: f64,
    /// Interval between stored states.
    pub thin: usize,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.states.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            m.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= self.len() as f64);
        m
    }

    /// Every `k`-th state as a sample set.
    pub fn to_sample_set(&self, k: usize) -> Result<ParameterSampleSet> {
        let k = k.max(1);
        let data = self.rows().step_by(k).flatten().copied().collect();
        ParameterSampleSet::new(
            self.dim,
            data,
            Provenance {
                method: self.method.clone(),
                seed: self.seed,
                thinning: k * self.thin,
            },
        )
    }
}

/// Settings shared by every sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSettings {
    /// Stored states after burn-in and thinning.
    pub iterations: usize,
    /// Extra leading iterations discarded, as a fraction of `iterations`.
    pub burn_in: f64,
    /// Keep every `thin`-th iteration.
    pub thin: usize,
    pub seed: u64,
    /// Starting point; zeros when `None`.
    pub init: Option<Vec<f64>>,
}

impl Default for ChainSettings {
    fn default() -> Self {
        ChainSettings {
            iterations: 2000,
            burn_in: 0.2,
            thin: 1,
            seed: 0,
            init: None,
        }
    }
}

impl ChainSettings {
    fn validate(&self, dim: usize) -> Result<()> {
        if self.iterations == 0 || self.thin == 0 || !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::InvalidArgument(alloc::format!(
                "invalid chain settings: iterations {}, thin {}, burn-in {}",
                self.iterations,
                self.thin,
                self.burn_in
            )));
        }
        if let Some(x) = &self.init {
            if x.len() != dim {
                return Err(Error::LengthMismatch {
                    what: "chain init",
                    expected: dim,
                    actual: x.len(),
                });
            }
        }
        Ok(())
    }

    fn burn_in_iterations(&self) -> usize {
        (self.burn_in * (self.iterations * self.thin) as f64) as usize
    }

    fn start(&self, dim: usize) -> Vec<f64> {
        self.init.clone().unwrap_or_else(|| vec![0.0; dim])
    }

    /// Total iterations and whether iteration `i` is stored.
    fn schedule(&self) -> (usize, impl Fn(usize) -> bool + '_) {
        let burn = self.burn_in_iterations();
        let total = burn + self.iterations * self.thin;
        (total, move |i| {
            i >= burn && (i - burn + 1).is_multiple_of(self.thin)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmcOptions {
    pub chain: ChainSettings,
    pub step_size: f64,
    pub leapfrog_steps: usize,
    /// Each trajectory uses `step_size · (1 ± step_jitter)`, uniformly.
    pub step_jitter: f64,
    /// Inverse mass matrix; identity when `None`.
    pub inverse_metric: Option<DMatrix<f64>>,
}

impl Default for HmcOptions {
    fn default() -> Self {
        HmcOptions {
            chain: ChainSettings::default(),
            step_size: 0.5,
            leapfrog_steps: 8,
            step_jitter: 0.1,
            inverse_metric: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhOptions {
    pub chain: ChainSettings,
    pub proposal_sd: f64,
    /// Proposals are `x + proposal_sd · L z` with `L Lᵀ` this matrix; identity when `None`.
    pub proposal_covariance: Option<DMatrix<f64>>,
    pub bp_options: BpOptions,
}

impl Default for MhOptions {
    fn default() -> Self {
        MhOptions {
            chain: ChainSettings::default(),
            proposal_sd: 0.1,
            proposal_covariance: None,
            bp_options: BpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LangevinOptions {
    pub chain: ChainSettings,
    /// `η` in `λ ← λ + (η²/2) ĝ + η ζ`.
    pub step_size: f64,
    /// Gibbs sweeps per contrastive divergence estimate.
    pub cd_sweeps: usize,
    /// Use the exact gradient instead of contrastive divergence.
    pub exact_gradient: bool,
}

impl Default for LangevinOptions {
    fn default() -> Self {
        LangevinOptions {
            chain: ChainSettings::default(),
            step_size: 0.01,
            cd_sweeps: 1,
            exact_gradient: false,
        }
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

fn lower_factor(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let mut s = m.clone();
    crate::math::symmetrize(&mut s);
    crate::math::cholesky_with_jitter(&s)
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidArgument(alloc::format!("{what} is not positive definite")))
}

fn initial_point<T: LogDensity + ?Sized>(target: &mut T, x: &[f64]) -> Result<f64> {
    target
        .log_density(x)?
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Degenerate("target unavailable at the initial point".into()))
}

/// Hamiltonian Monte Carlo with leapfrog integration and a dense metric.
pub fn hmc<T: GradLogDensity + ?Sized>(
    target: &mut T,
    opts: &HmcOptions,
    method: &str,
) -> Result<Chain> {
    let dim = target.dim();
    opts.chain.validate(dim)?;
    if !(opts.step_size >= 0.0)
        || opts.leapfrog_steps == 0
        || !(0.0..1.0).contains(&opts.step_jitter)
    {
        return Err(Error::InvalidArgument("invalid HMC step settings".into()));
    }
    let (inv_metric, momentum_factor) = match &opts.inverse_metric {
        Some(m) if m.nrows() == dim && m.ncols() == dim => {
            let mut minv = m.clone();
            crate::math::symmetrize(&mut minv);
            let mass = minv
                .clone()
                .try_inverse()
                .ok_or(Error::Singular(f64::INFINITY))?;
            (minv, lower_factor(&mass, "mass matrix")?)
        }
        Some(m) => {
            return Err(Error::LengthMismatch {
                what: "inverse metric",
                expected: dim,
                actual: m.nrows(),
            })
        }
        None => (DMatrix::identity(dim, dim), DMatrix::identity(dim, dim)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.chain.seed);
    let mut x = DVector::from_vec(opts.chain.start(dim));
    let (mut lp, g0) = target
        .log_density_and_grad(x.as_slice())?
        .filter(|(v, _)| v.is_finite())
        .ok_or_else(|| Error::Degenerate("target unavailable at the initial point".into()))?;
    let mut grad = DVector::from_vec(g0);
    let (total, keep) = opts.chain.schedule();
    let mut states = Vec::with_capacity(opts.chain.iterations * dim);
    let (mut accepted, mut max_err) = (0usize, 0.0f64);
    for it in 0..total {
        let eps = opts.step_size * (1.0 + opts.step_jitter * (2.0 * rng.random::<f64>() - 1.0));
        let p0 = &momentum_factor * normal_vec(&mut rng, dim);
        let kinetic0 = 0.5 * p0.dot(&(&inv_metric * &p0));
        let mut p = p0;
        let mut xn = x.clone();
        let mut gn = grad.clone();
        let mut lpn = lp;
        let mut ok = true;
        p.axpy(0.5 * eps, &gn, 1.0);
        for step in 0..opts.leapfrog_steps {
            xn.axpy(eps, &(&inv_metric * &p), 1.0);
            match target.log_density_and_grad(xn.as_slice())? {
                Some((v, g)) if v.is_finite() => {
                    lpn = v;
                    gn = DVector::from_vec(g);
                }
                _ => {
                    ok = false;
                    break;
                }
            }
            let w = if step + 1 == opts.leapfrog_steps {
                0.5 * eps
            } else {
                eps
            };
            p.axpy(w, &gn, 1.0);
        }
        if ok {
            let kinetic1 = 0.5 * p.dot(&(&inv_metric * &p));
            let dh = (-lpn + kinetic1) - (-lp + kinetic0);
            if dh.is_finite() {
                max_err = max_err.max(dh.abs());
                if rng.random::<f64>().ln() < -dh {
                    x = xn;
                    lp = lpn;
                    grad = gn;
                    accepted += 1;
                    target.accepted();
                }
            }
        }
        if keep(it) {
            states.extend_from_slice(x.as_slice());
        }
    }
    Ok(Chain {
        states,
        dim,
        acceptance_rate: accepted as f64 / total as f64,
        method: method.into(),
        seed: opts.chain.seed,
        bp_failures: target.failures(),
        max_energy_error: max_err,
        thin: opts.chain.thin,
    })
}

/// Random-walk Metropolis with Gaussian proposals.
pub fn random_walk_mh<T: LogDensity + ?Sized>(
    target: &mut T,
    opts: &MhOptions,
    method: &str,
) -> Result<Chain> {
    let dim = target.dim();
    opts.chain.validate(dim)?;
    if !(opts.proposal_sd >= 0.0) {
        return Err(Error::InvalidArgument(
            "proposal sd must be non-negative".into(),
        ));
    }
    let factor = match &opts.proposal_covariance {
        Some(c) if c.nrows() == dim && c.ncols() == dim => lower_factor(c, "proposal covariance")?,
        Some(c) => {
            return Err(Error::LengthMismatch {
                what: "proposal covariance",
                expected: dim,
                actual: c.nrows(),
            })
        }
        None => DMatrix::identity(dim, dim),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.chain.seed);
    let mut x = DVector::from_vec(opts.chain.start(dim));
    let mut lp = initial_point(target, x.as_slice())?;
    target.accepted();
    let (total, keep) = opts.chain.schedule();
    let mut states = Vec::with_capacity(opts.chain.iterations * dim);
    let mut accepted = 0usize;
    for it in 0..total {
        let step = &factor * normal_vec(&mut rng, dim) * opts.proposal_sd;
        let proposal = &x + step;
        let u: f64 = rng.random();
        if let Some(lpn) = target
            .log_density(proposal.as_slice())?
            .filter(|v| !v.is_nan())
        {
            if u.ln() < lpn - lp {
                x = proposal;
                lp = lpn;
                accepted += 1;
                target.accepted();
            }
        }
        if keep(it) {
            states.extend_from_slice(x.as_slice());
        }
    }
    Ok(Chain {
        states,
        dim,
        acceptance_rate: accepted as f64 / total as f64,
        method: method.into(),
        seed: opts.chain.seed,
        bp_failures: target.failures(),
        max_energy_error: 0.0,
        thin: opts.chain.thin,
    })
}

/// Unadjusted Langevin dynamics driven by a gradient estimate.
pub fn langevin<G: GradientEstimator + ?Sized>(
    grad: &mut G,
    opts: &LangevinOptions,
    method: &str,
) -> Result<Chain> {
    let dim = grad.dim();
    opts.chain.validate(dim)?;
    if !(opts.step_size >= 0.0) {
        return Err(Error::InvalidArgument(
            "Langevin step size must be non-negative".into(),
        ));
    }
    let eta = opts.step_size;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.chain.seed);
    let mut x = opts.chain.start(dim);
    let (total, keep) = opts.chain.schedule();
    let mut states = Vec::with_capacity(opts.chain.iterations * dim);
    for it in 0..total {
        let g = grad.estimate(&x, &mut rng)?;
        for (xi, gi) in x.iter_mut().zip(&g) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *xi += 0.5 * eta * eta * gi + eta * z;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("Langevin chain diverged".into()));
        }
        if keep(it) {
            states.extend_from_slice(&x);
        }
    }
    Ok(Chain {
        states,
        dim,
        acceptance_rate: 1.0,
        method: method.into(),
        seed: opts.chain.seed,
        bp_failures: 0,
        max_energy_error: 0.0,
        thin: opts.chain.thin,
    })
}

/// HMC on the exact posterior.
pub fn hmc_exact(
    graph: &Graph,
    dataset: &Dataset,
    prior: &GaussianPrior,
    options: &HmcOptions,
) -> Result<Chain> {
    let mut target = MrfExactPosterior::new(graph, dataset, prior)?;
    hmc(&mut target, options, "hmc-exact")
}

/// Unadjusted Langevin with contrastive divergence (or exact) gradients.
pub fn langevin_cd(
    graph: &Graph,
    dataset: &Dataset,
    prior: &GaussianPrior,
    options: &LangevinOptions,
) -> Result<Chain> {
    if options.exact_gradient {
        let mut target = MrfExactPosterior::new(graph, dataset, prior)?;
        langevin(&mut ExactGradient(&mut target), options, "lv-exact")
    } else {
        let mut est = MrfCdGradient::new(graph, dataset, prior, options.cd_sweeps)?;
        langevin(&mut est, options, "lv-cd")
    }
}

/// Metropolis–Hastings with `log Z` replaced by minus the Bethe free energy.
pub fn mh_bethe(
    graph: &Graph,
    dataset: &Dataset,
    prior: &GaussianPrior,
    options: &MhOptions,
) -> Result<Chain> {
    let mut target = MrfBethePosterior::new(graph, dataset, prior, options.bp_options.clone())?;
    random_walk_mh(&mut target, options, "mc-bp")
}

/// Metropolis–Hastings on the exact posterior.
pub fn mh_exact(
    graph: &Graph,
    dataset: &Dataset,
    prior: &GaussianPrior,
    options: &MhOptions,
) -> Result<Chain> {
    let mut target = MrfExactPosterior::new(graph, dataset, prior)?;
    random_walk_mh(&mut target, options, "mh-exact")
}
