//! Gaussian posterior `N(λ^MP, Σ)` with `Σ⁻¹ = N·C + Λ⁻¹`, and parameter sample sets.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::graph::GaussianPrior;
use crate::math::{self, JITTER};
use crate::response::PSD_REPAIR_TOLERANCE;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    /// Lower Cholesky factor of `covariance`.
    pub factor: DMatrix<f64>,
    pub jitter_applied: bool,
}

impl GaussianPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_det_covariance(&self) -> f64 {
        2.0 * self.factor.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Builds the posterior from the MAP point, a feature covariance `C`, the
/// prior and the number of data cases.
pub fn assemble_posterior(
    lambda_map: &[f64],
    c: &DMatrix<f64>,
    prior: &GaussianPrior,
    n: usize,
) -> Result<GaussianPosterior> {
    let f = lambda_map.len();
    if n < 1 {
        return Err(Error::InvalidArgument("posterior needs N >= 1".into()));
    }
    if c.nrows() != f || c.ncols() != f {
        return Err(Error::LengthMismatch {
            what: "covariance dimension",
            expected: f,
            actual: c.nrows(),
        });
    }
    if !prior.dimension_matches(f) {
        return Err(Error::LengthMismatch {
            what: "prior dimension",
            expected: f,
            actual: 0,
        });
    }
    if lambda_map.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite posterior mean".into()));
    }
    if f > 0 {
        let min = math::min_eigenvalue(c);
        if min < -PSD_REPAIR_TOLERANCE {
            return Err(Error::NotPsd(min));
        }
    }
    let mut precision = c * n as f64 + prior.precision_matrix(f);
    math::symmetrize(&mut precision);
    let mut jitter_applied = false;
    if precision.clone().cholesky().is_none() {
        precision += DMatrix::<f64>::identity(f, f) * JITTER;
        jitter_applied = true;
    }
    let mut covariance = precision
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::Singular(f64::INFINITY))?;
    math::symmetrize(&mut covariance);
    let chol = match covariance.clone().cholesky() {
        Some(ch) => ch,
        None => {
            covariance += DMatrix::<f64>::identity(f, f) * JITTER;
            jitter_applied = true;
            covariance
                .clone()
                .cholesky()
                .ok_or(Error::NotPsd(math::min_eigenvalue(&covariance)))?
        }
    };
    Ok(GaussianPosterior {
        mean: lambda_map.to_vec(),
        covariance,
        precision,
        factor: chol.l(),
        jitter_applied,
    })
}

/// Gaussian log-density at `lambda`.
pub fn log_pdf(posterior: &GaussianPosterior, lambda: &[f64]) -> Result<f64> {
    let f = posterior.dim();
    if lambda.len() != f {
        return Err(Error::LengthMismatch {
            what: "parameter vector",
            expected: f,
            actual: lambda.len(),
        });
    }
    let d = DVector::from_iterator(f, lambda.iter().zip(&posterior.mean).map(|(a, b)| a - b));
    let z = posterior
        .factor
        .solve_lower_triangular(&d)
        .ok_or(Error::Singular(f64::INFINITY))?;
    let quad = z.norm_squared();
    Ok(-0.5
        * (f as f64 * (2.0 * core::f64::consts::PI).ln() + posterior.log_det_covariance() + quad))
}

/// Where a sample set came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub method: String,
    pub seed: u64,
    /// Interval between kept chain states; 1 for independent draws.
    pub thinning: usize,
}

/// `n × F` parameter samples, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSampleSet {
    dim: usize,
    data: Vec<f64>,
    pub provenance: Provenance,
}

impl ParameterSampleSet {
    pub fn new(dim: usize, data: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::LengthMismatch {
                what: "sample data",
                expected: dim,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite sample".into()));
        }
        Ok(ParameterSampleSet {
            dim,
            data,
            provenance,
        })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>], provenance: Provenance) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::LengthMismatch {
                    what: "sample row",
                    expected: dim,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data, provenance)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = alloc::vec![0.0; self.dim];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let mut c = DMatrix::zeros(self.dim, self.dim);
        for r in self.rows() {
            let d = DVector::from_iterator(self.dim, r.iter().zip(&mean).map(|(a, b)| a - b));
            c += &d * d.transpose();
        }
        c / (self.len().max(2) - 1) as f64
    }

    /// Rows `0, k, 2k, ...`.
    pub fn thinned(&self, k: usize) -> ParameterSampleSet {
        let k = k.max(1);
        let data = self.rows().step_by(k).flatten().copied().collect();
        ParameterSampleSet {
            dim: self.dim,
            data,
            provenance: Provenance {
                thinning: self.provenance.thinning * k,
                ..self.provenance.clone()
            },
        }
    }
}

/// `n` independent draws `mean + L z`; deterministic for a given seed.
pub fn sample_posterior(
    posterior: &GaussianPosterior,
    n: usize,
    seed: u64,
) -> Result<ParameterSampleSet> {
    sample_posterior_stream(posterior, n, seed, 0)
}

/// As [`sample_posterior`], drawing from generator stream `stream` of `seed`.
pub fn sample_posterior_stream(
    posterior: &GaussianPosterior,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<ParameterSampleSet> {
    let f = posterior.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut data = Vec::with_capacity(n * f);
    for _ in 0..n {
        let z = DVector::from_iterator(f, (0..f).map(|_| StandardNormal.sample(&mut rng)));
        let x = &posterior.factor * z;
        data.extend(x.iter().zip(&posterior.mean).map(|(a, b)| a + b));
    }
    ParameterSampleSet::new(
        f.max(1),
        data,
        Provenance {
            method: "bethe-laplace".into(),
            seed,
            thinning: 1,
        },
    )
}
