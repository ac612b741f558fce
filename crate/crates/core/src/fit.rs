//! MAP estimation of `λ` under a Gaussian prior.
//!
//! The objective is the penalized log-likelihood divided by `N`:
//!
//! ```text
//! L(λ) = λᵀf̄ - log Z(λ) - λᵀΛ⁻¹λ / (2N),    ∇L = f̄ - E_λ[f] - Λ⁻¹λ / N
//! ```
//!
//! The BP backend replaces `-log Z` by the Bethe free energy at the BP fixed
//! point, whose gradient is `-κ_BP`, so the same ascent applies to both.

use alloc::format;
use alloc::vec::Vec;

use crate::bp::{
    bethe_free_energy, clamp_interior, run_sum_product_from, Beliefs, BpOptions, BELIEF_FLOOR,
};
use crate::exact::{brute_log_z_and_kappa, grid_log_z_and_marginals};
use crate::graph::{Dataset, GaussianPrior, Graph, PairwiseBinaryModel};
use crate::math::dot;
use crate::optimize::{maximize, AscentOptions};
use crate::response::fixed_point_lambda;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    ExactBrute,
    ExactGrid,
    Bp,
}

impl Backend {
    /// The exact backend suited to the graph: the grid transfer if it is a grid.
    pub fn exact_for(graph: &Graph) -> Backend {
        if graph.grid_shape().is_some() {
            Backend::ExactGrid
        } else {
            Backend::ExactBrute
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Backend::ExactBrute => "exact-brute",
            Backend::ExactGrid => "exact-grid",
            Backend::Bp => "bp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub backend: Backend,
    pub max_iters: usize,
    /// Convergence threshold on the max-norm of the gradient of `L`.
    pub grad_tol: f64,
    /// Pseudocount for the smoothed empirical moments used at initialization.
    pub delta: f64,
    /// Step size tried on the first iteration.
    pub initial_step: f64,
    pub bp_options: BpOptions,
    /// Starting point; pseudo-moment matching when `None`.
    pub init: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            backend: Backend::ExactBrute,
            max_iters: 500,
            grad_tol: 1e-8,
            delta: 0.5,
            initial_step: 0.1,
            bp_options: BpOptions::default(),
            init: None,
        }
    }
}

impl FitOptions {
    pub fn with_backend(backend: Backend) -> Self {
        FitOptions {
            backend,
            ..FitOptions::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) || !(self.delta > 0.0) || !(self.initial_step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "fit options need positive grad_tol, delta and initial_step (got {}, {}, {})",
                self.grad_tol, self.delta, self.initial_step
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub lambda_map: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub backend: Backend,
    pub converged: bool,
    /// `L` at the returned point.
    pub objective: f64,
    /// `L` after every accepted step.
    pub objective_trace: Vec<f64>,
    /// Trial points where BP did not converge.
    pub bp_failures: usize,
}

/// Smoothed node and edge frequencies, moved inside the Fréchet bounds.
pub fn empirical_moments(dataset: &Dataset, graph: &Graph, delta: f64) -> Result<Beliefs> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must be non-negative, got {delta}"
        )));
    }
    let n = dataset.len() as f64;
    let sums = dataset.feature_sum(graph)?;
    let (nodes, edges) = sums.split_at(graph.node_count());
    let mut q: Vec<f64> = nodes
        .iter()
        .map(|c| (c + delta) / (n + 2.0 * delta))
        .collect();
    let mut xi: Vec<f64> = edges
        .iter()
        .map(|c| (c + delta) / (n + 4.0 * delta))
        .collect();
    clamp_interior(&mut q, &mut xi, graph, BELIEF_FLOOR);
    Ok(Beliefs { q, xi })
}

/// Parameters whose Bethe fixed point reproduces the given moments.
pub fn pseudo_moment_match(moments: &Beliefs, graph: &Graph) -> Result<Vec<f64>> {
    fixed_point_lambda(moments, graph)
}

/// Penalized objective `L` and its gradient under an exact backend.
pub fn exact_objective(
    model: &PairwiseBinaryModel,
    feature_mean: &[f64],
    prior: &GaussianPrior,
    n: usize,
    backend: Backend,
) -> Result<(f64, Vec<f64>)> {
    let (log_z, kappa) = match backend {
        Backend::ExactBrute => brute_log_z_and_kappa(model)?,
        Backend::ExactGrid => {
            let m = grid_log_z_and_marginals(model)?;
            let kappa = m.kappa();
            (m.log_z, kappa)
        }
        Backend::Bp => {
            return Err(Error::InvalidArgument(
                "exact_objective needs an exact backend".into(),
            ))
        }
    };
    Ok(assemble(
        model.lambda(),
        feature_mean,
        prior,
        n,
        -log_z,
        &kappa,
    ))
}

fn assemble(
    lambda: &[f64],
    feature_mean: &[f64],
    prior: &GaussianPrior,
    n: usize,
    neg_log_z: f64,
    kappa: &[f64],
) -> (f64, Vec<f64>) {
    let pull = prior.precision_mul(lambda);
    let n = n as f64;
    let value = dot(lambda, feature_mean) + neg_log_z - 0.5 * dot(lambda, &pull) / n;
    let grad = feature_mean
        .iter()
        .zip(kappa)
        .zip(&pull)
        .map(|((f, k), p)| f - k - p / n)
        .collect();
    (value, grad)
}

/// Gradient ascent on the penalized log-likelihood.
pub fn fit_map(
    graph: &Graph,
    dataset: &Dataset,
    prior: &GaussianPrior,
    options: &FitOptions,
) -> Result<FitResult> {
    options.validate()?;
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
    let n = dataset.len();
    let feature_mean: Vec<f64> = dataset
        .feature_sum(graph)?
        .iter()
        .map(|s| s / n as f64)
        .collect();
    let init = match &options.init {
        Some(x) if x.len() == f => x.clone(),
        Some(x) => {
            return Err(Error::LengthMismatch {
                what: "initial parameters",
                expected: f,
                actual: x.len(),
            })
        }
        None => pseudo_moment_match(&empirical_moments(dataset, graph, options.delta)?, graph)?,
    };
    let model = PairwiseBinaryModel::from_lambda(graph.clone(), &init)?;
    let ascent = AscentOptions {
        max_iters: options.max_iters,
        grad_tol: options.grad_tol,
        initial_step: options.initial_step,
    };
    let result = match options.backend {
        Backend::ExactBrute | Backend::ExactGrid => maximize(init, &ascent, |x| {
            exact_objective(
                &model.with_lambda(x),
                &feature_mean,
                prior,
                n,
                options.backend,
            )
            .map(Some)
        })?,
        Backend::Bp => {
            let mut warm: Option<Vec<f64>> = None;
            maximize(init, &ascent, |x| {
                let m = model.with_lambda(x);
                let bp = run_sum_product_from(&m, &options.bp_options, warm.as_deref())?;
                if !bp.converged {
                    return Ok(None);
                }
                let Ok(free_energy) = bethe_free_energy(&m, &bp.beliefs) else {
                    return Ok(None);
                };
                let kappa = bp.beliefs.feature_expectations();
                warm = Some(bp.messages);
                Ok(Some(assemble(
                    x,
                    &feature_mean,
                    prior,
                    n,
                    free_energy,
                    &kappa,
                )))
            })?
        }
    };
    Ok(FitResult {
        lambda_map: result.x,
        grad_norm: result.grad_norm,
        iterations: result.iterations,
        backend: options.backend,
        converged: result.converged,
        objective: result.value,
        objective_trace: result.trace,
        bp_failures: result.failed_evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{brute_moments, exact_sample, perfect_sample};
    use crate::graph::{build_graph, chain_graph, grid_graph};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::vec::Vec as StdVec;

    fn random_tree(n: usize, rng: &mut ChaCha8Rng) -> Graph {
        let edges: StdVec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
        build_graph(n, &edges).unwrap()
    }

    fn random_lambda(f: usize, scale: f64, rng: &mut ChaCha8Rng) -> StdVec<f64> {
        (0..f)
            .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
            .collect()
    }

    #[test]
    fn empirical_moment_cases() {
        let g = build_graph(1, &[]).unwrap();
        let ones = Dataset::new(1, &[vec![1], vec![1]]).unwrap();
        assert!((empirical_moments(&ones, &g, 1.0).unwrap().q[0] - 0.75).abs() < 1e-15);
        let balanced = Dataset::new(1, &[vec![1], vec![0]]).unwrap();
        assert!((empirical_moments(&balanced, &g, 1e-12).unwrap().q[0] - 0.5).abs() < 1e-12);
        let empty = Dataset::new(1, &[]).unwrap();
        assert!(matches!(
            empirical_moments(&empty, &g, 0.5),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn empirical_moments_of_independent_coins() {
        let g = chain_graph(2).unwrap();
        let model = PairwiseBinaryModel::zeros(g.clone());
        let data = perfect_sample(&model, 40_000, 3).unwrap();
        let b = empirical_moments(&data, &g, 0.5).unwrap();
        let product = b.q[0] * b.q[1];
        // sd of ξ̂ is about sqrt(0.25 * 0.75 / N)
        assert!((b.xi[0] - product).abs() < 4.0 * (0.1875f64 / 40_000.0).sqrt());
        b.validate(&g).unwrap();
    }

    #[test]
    fn pseudo_moment_match_cases() {
        let g = chain_graph(3).unwrap();
        let q = vec![0.3, 0.6, 0.45];
        let xi = vec![q[0] * q[1], q[1] * q[2]];
        let l = pseudo_moment_match(&Beliefs { q, xi }, &g).unwrap();
        assert!(l[3..].iter().all(|w| w.abs() < 1e-12));

        let iso = build_graph(3, &[]).unwrap();
        let l = pseudo_moment_match(
            &Beliefs {
                q: vec![0.5; 3],
                xi: vec![],
            },
            &iso,
        )
        .unwrap();
        assert!(l.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn pseudo_moment_match_is_consistent_on_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random_tree(7, &mut rng);
        let truth = random_lambda(g.feature_count(), 1.0, &mut rng);
        let model = PairwiseBinaryModel::from_lambda(g.clone(), &truth).unwrap();
        let exact = Beliefs::from_features(&g, &brute_moments(&model).unwrap().kappa).unwrap();
        let l = pseudo_moment_match(&exact, &g).unwrap();
        for (a, b) in l.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-9);
        }
        let data = exact_sample(&model, 200_000, 9).unwrap();
        let l = pseudo_moment_match(&empirical_moments(&data, &g, 0.5).unwrap(), &g).unwrap();
        for (a, b) in l.iter().zip(&truth) {
            assert!((a - b).abs() < 0.1, "{a} vs {b}");
        }
    }

    #[test]
    fn single_node_balanced_fit_is_zero() {
        let g = build_graph(1, &[]).unwrap();
        let data = Dataset::new(1, &[vec![1], vec![0], vec![1], vec![0]]).unwrap();
        for backend in [Backend::ExactBrute, Backend::Bp] {
            for var in [0.1, 1.0, 100.0] {
                let opts = FitOptions {
                    init: Some(vec![1.3]),
                    ..FitOptions::with_backend(backend)
                };
                let r = fit_map(&g, &data, &GaussianPrior::isotropic(var).unwrap(), &opts).unwrap();
                assert!(r.converged && r.lambda_map[0].abs() < 1e-7);
            }
        }
    }

    #[test]
    fn backends_agree_on_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..4 {
            let g = random_tree(8, &mut rng);
            let truth = random_lambda(g.feature_count(), 0.8, &mut rng);
            let model = PairwiseBinaryModel::from_lambda(g.clone(), &truth).unwrap();
            let data = exact_sample(&model, 300, rng.random()).unwrap();
            let prior = GaussianPrior::isotropic(1.0).unwrap();
            let exact = fit_map(&g, &data, &prior, &FitOptions::default()).unwrap();
            let bp = fit_map(&g, &data, &prior, &FitOptions::with_backend(Backend::Bp)).unwrap();
            assert!(exact.converged && bp.converged);
            assert!(exact.grad_norm <= 1e-8 && bp.grad_norm <= 1e-8);
            for (a, b) in exact.lambda_map.iter().zip(&bp.lambda_map) {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn grid_and_brute_backends_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = grid_graph(3, 3).unwrap();
        let model =
            PairwiseBinaryModel::from_lambda(g.clone(), &random_lambda(21, 0.5, &mut rng)).unwrap();
        let data = perfect_sample(&model, 200, 1).unwrap();
        let prior = GaussianPrior::isotropic(2.0).unwrap();
        let a = fit_map(&g, &data, &prior, &FitOptions::default()).unwrap();
        let b = fit_map(
            &g,
            &data,
            &prior,
            &FitOptions::with_backend(Backend::ExactGrid),
        )
        .unwrap();
        for (x, y) in a.lambda_map.iter().zip(&b.lambda_map) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn restarts_agree_and_objective_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let g = grid_graph(3, 3).unwrap();
        let model =
            PairwiseBinaryModel::from_lambda(g.clone(), &random_lambda(21, 0.5, &mut rng)).unwrap();
        let data = perfect_sample(&model, 100, 5).unwrap();
        let prior = GaussianPrior::isotropic(1.0).unwrap();
        let fits: StdVec<FitResult> = (0..5)
            .map(|_| {
                let init = random_lambda(21, 2.0, &mut rng);
                fit_map(
                    &g,
                    &data,
                    &prior,
                    &FitOptions {
                        init: Some(init),
                        ..FitOptions::default()
                    },
                )
                .unwrap()
            })
            .collect();
        for fit in &fits {
            assert!(fit.converged);
            assert!(fit.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
            for (a, b) in fit.lambda_map.iter().zip(&fits[0].lambda_map) {
                assert!((a - b).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn prior_shrinks_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = chain_graph(4).unwrap();
        let model =
            PairwiseBinaryModel::from_lambda(g.clone(), &random_lambda(7, 1.5, &mut rng)).unwrap();
        let data = perfect_sample(&model, 50, 2).unwrap();
        let norms: StdVec<f64> = [10.0, 1.0, 0.1, 0.01]
            .iter()
            .map(|&v| {
                let r = fit_map(
                    &g,
                    &data,
                    &GaussianPrior::isotropic(v).unwrap(),
                    &FitOptions::default(),
                )
                .unwrap();
                dot(&r.lambda_map, &r.lambda_map).sqrt()
            })
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let g = chain_graph(2).unwrap();
        let data = Dataset::new(2, &[vec![0, 1]]).unwrap();
        let prior = GaussianPrior::isotropic(1.0).unwrap();
        let opts = FitOptions {
            grad_tol: 0.0,
            ..FitOptions::default()
        };
        assert!(fit_map(&g, &data, &prior, &opts).is_err());
        let opts = FitOptions {
            init: Some(vec![0.0]),
            ..FitOptions::default()
        };
        assert!(fit_map(&g, &data, &prior, &opts).is_err());
        let opts = FitOptions::with_backend(Backend::ExactGrid);
        let tri = build_graph(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let data3 = Dataset::new(3, &[vec![0, 1, 1]]).unwrap();
        assert!(matches!(
            fit_map(&tri, &data3, &prior, &opts),
            Err(Error::NotAGrid)
        ));
    }
}
