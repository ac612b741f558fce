//! Grid posterior experiment and interaction-strength sweep.

use std::time::Instant;

use bethe_core::exact::{brute_moments, exact_sample, log_z_and_kappa, BRUTE_MOMENTS_LIMIT};
use bethe_core::fit::{fit_map, Backend, FitOptions, FitResult};
use bethe_core::graph::{convert_spin_model, grid_graph};
use bethe_core::posterior::assemble_posterior;
use bethe_core::response::lr_covariance;
use bethe_core::samplers::{
    hmc_exact, langevin_cd, mh_bethe, mh_exact, ChainSettings, HmcOptions, LangevinOptions,
    MhOptions,
};
use bethe_core::{
    Dataset, GaussianPosterior, GaussianPrior, Graph, PairwiseBinaryModel, ParameterSampleSet,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{
    bp_options, dispersed_inits, gaussian_sets, langevin_step, mean_se, ols_slope, pairwise_scores,
    run_pooled, split_sets, Cell, ExperimentReport, Gate, PooledRun, Reference, Status, Trend,
    SELF_SCORE,
};
use crate::config::{ExperimentConfig, ExperimentKind, Method};
use crate::seeds::{cell_seed, tag};

/// Exact feature covariance: enumeration on small graphs, otherwise central
/// differences of the exact feature means.
pub fn exact_covariance(model: &PairwiseBinaryModel) -> bethe_core::Result<DMatrix<f64>> {
    if model.graph().node_count() <= BRUTE_MOMENTS_LIMIT {
        return Ok(brute_moments(model)?.covariance);
    }
    let lambda = model.lambda().to_vec();
    let f = lambda.len();
    let h = 1e-5;
    let mut c = DMatrix::zeros(f, f);
    for k in 0..f {
        let mut hi = lambda.clone();
        let mut lo = lambda.clone();
        hi[k] += h;
        lo[k] -= h;
        let (_, kp) = log_z_and_kappa(&model.with_lambda(&hi))?;
        let (_, km) = log_z_and_kappa(&model.with_lambda(&lo))?;
        for r in 0..f {
            c[(r, k)] = (kp[r] - km[r]) / (2.0 * h);
        }
    }
    Ok(0.5 * (&c + c.transpose()))
}

/// A model with its data, ready to be scored by every method.
struct Problem {
    model_index: usize,
    x_index: usize,
    x: f64,
    model: PairwiseBinaryModel,
    data: Dataset,
}

fn seed_for(cfg: &ExperimentConfig, p: &Problem, role: u64, extra: u64) -> u64 {
    let kind = match cfg.kind {
        ExperimentKind::StrengthSweep => tag::SWEEP,
        _ => tag::GRID,
    };
    cell_seed(
        cfg.seed,
        &[kind, p.model_index as u64, p.x_index as u64, role, extra],
    )
}

fn prior(cfg: &ExperimentConfig) -> bethe_core::Result<GaussianPrior> {
    GaussianPrior::isotropic(cfg.prior_variance)
}

fn fit_options(cfg: &ExperimentConfig, backend: Backend) -> FitOptions {
    FitOptions {
        bp_options: bp_options(cfg),
        ..FitOptions::with_backend(backend)
    }
}

/// Exact MAP and the Laplace posterior with the exact covariance.
struct ExactFit {
    fit: FitResult,
    laplace: GaussianPosterior,
}

fn exact_fit(cfg: &ExperimentConfig, p: &Problem) -> bethe_core::Result<ExactFit> {
    let graph = p.model.graph();
    let fit = fit_map(
        graph,
        &p.data,
        &prior(cfg)?,
        &fit_options(cfg, Backend::exact_for(graph)),
    )?;
    let at_map = p.model.with_lambda(&fit.lambda_map);
    let c = exact_covariance(&at_map)?;
    let laplace = assemble_posterior(&fit.lambda_map, &c, &prior(cfg)?, p.data.len())?;
    Ok(ExactFit { fit, laplace })
}

fn ground_truth_run(
    cfg: &ExperimentConfig,
    p: &Problem,
    exact: &ExactFit,
    role: u64,
) -> bethe_core::Result<PooledRun> {
    let graph = p.model.graph();
    let needed = cfg.set_size * cfg.set_count;
    let seed = seed_for(cfg, p, role, 0);
    let inits = dispersed_inits(&exact.laplace, cfg.gt_chains, seed)?;
    let prior = prior(cfg)?;
    let gate = Gate {
        chains: cfg.gt_chains,
        threshold: cfg.mpsrf_threshold,
        extensions: cfg.mpsrf_extensions,
        resize: true,
    };
    run_pooled(
        |c, iterations| {
            let opts = HmcOptions {
                chain: ChainSettings {
                    iterations,
                    seed: seed_for(cfg, p, role, 1 + c as u64),
                    init: Some(inits[c].clone()),
                    ..ChainSettings::default()
                },
                step_size: cfg.hmc_step,
                leapfrog_steps: cfg.hmc_leapfrog,
                inverse_metric: Some(exact.laplace.covariance.clone()),
                ..HmcOptions::default()
            };
            hmc_exact(graph, &p.data, &prior, &opts)
        },
        &gate,
        needed,
        2 * needed.div_ceil(cfg.gt_chains),
    )
}

fn reference(
    cfg: &ExperimentConfig,
    p: &Problem,
    exact: &ExactFit,
) -> bethe_core::Result<Reference> {
    let start = Instant::now();
    let gt = ground_truth_run(cfg, p, exact, tag::GROUND_TRUTH)?;
    let rep = ground_truth_run(cfg, p, exact, tag::REPLICATE)?;
    let sets = split_sets(&gt.pool, cfg.set_count, cfg.set_size)?;
    let rep_sets = split_sets(&rep.pool, cfg.set_count, cfg.set_size)?;
    let scores = pairwise_scores(&rep_sets, &sets)?;
    let mut notes = gt.notes();
    notes.extend(rep.notes().into_iter().map(|n| format!("replicate-{n}")));
    let flagged = !(gt.converged && rep.converged) || gt.under_thinned || rep.under_thinned;
    let self_cell = Cell {
        model: p.model_index,
        method: SELF_SCORE.into(),
        x: p.x,
        scores,
        status: if flagged { Status::Flagged } else { Status::Ok },
        notes,
        bp_failures: 0,
        mpsrf: Some(gt.mpsrf.max(rep.mpsrf)),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(Reference { sets, self_cell })
}

/// Sample sets of one method plus its warnings.
struct MethodOutput {
    sets: Vec<ParameterSampleSet>,
    notes: Vec<String>,
    flagged: bool,
    bp_failures: usize,
    mpsrf: Option<f64>,
}

fn laplace_sets(
    cfg: &ExperimentConfig,
    p: &Problem,
    method: Method,
    lambda: &[f64],
    mut notes: Vec<String>,
    bp_failures: usize,
) -> bethe_core::Result<MethodOutput> {
    let lr = lr_covariance(&p.model.with_lambda(lambda), &bp_options(cfg))?;
    let post = assemble_posterior(lambda, &lr.lr.covariance, &prior(cfg)?, p.data.len())?;
    if lr.lr.psd_repair_applied {
        notes.push(format!(
            "psd-repair(min-eig={:e})",
            lr.lr.min_eigenvalue_before_repair
        ));
    }
    let sets = gaussian_sets(
        &post,
        cfg.set_count,
        cfg.set_size,
        seed_for(cfg, p, tag::METHOD, method.index()),
        method.name(),
    )?;
    let flagged = lr.lr.psd_repair_applied || bp_failures > 0;
    Ok(MethodOutput {
        sets,
        notes,
        flagged,
        bp_failures,
        mpsrf: None,
    })
}

fn run_method(
    cfg: &ExperimentConfig,
    p: &Problem,
    exact: &ExactFit,
    method: Method,
) -> bethe_core::Result<MethodOutput> {
    let graph: &Graph = p.model.graph();
    let needed = cfg.set_size * cfg.set_count;
    let seed = seed_for(cfg, p, tag::METHOD, method.index());
    let sampler_gate = Gate {
        chains: cfg.gt_chains,
        threshold: cfg.mpsrf_threshold,
        extensions: 0,
        resize: false,
    };
    let chain = |c: usize, iterations: usize, inits: &[Vec<f64>]| ChainSettings {
        iterations,
        seed: seed_for(cfg, p, tag::METHOD, 16 * method.index() + 1 + c as u64),
        init: Some(inits[c].clone()),
        ..ChainSettings::default()
    };
    let pooled = |run: PooledRun| -> bethe_core::Result<MethodOutput> {
        let mut sets = split_sets(&run.pool, cfg.set_count, cfg.set_size)?;
        for s in &mut sets {
            s.provenance.method = method.name().into();
        }
        Ok(MethodOutput {
            sets,
            notes: run.notes(),
            flagged: !run.converged || run.under_thinned || run.bp_failures > 0,
            bp_failures: run.bp_failures,
            mpsrf: Some(run.mpsrf),
        })
    };
    match method {
        Method::BlMp => laplace_sets(cfg, p, method, &exact.fit.lambda_map, Vec::new(), 0),
        Method::BlBp => {
            let fit = fit_map(graph, &p.data, &prior(cfg)?, &fit_options(cfg, Backend::Bp))?;
            let mut notes = vec![format!("fit-iterations={}", fit.iterations)];
            if !fit.converged {
                notes.push("fit-unconverged".into());
            }
            let mut out = laplace_sets(cfg, p, method, &fit.lambda_map, notes, fit.bp_failures)?;
            out.flagged |= !fit.converged;
            Ok(out)
        }
        Method::LvCd => {
            let inits = dispersed_inits(&exact.laplace, cfg.gt_chains, seed)?;
            let prior = prior(cfg)?;
            let step = langevin_step(cfg, &exact.laplace);
            let run = run_pooled(
                |c, iterations| {
                    let opts = LangevinOptions {
                        chain: chain(c, iterations, &inits),
                        step_size: step,
                        cd_sweeps: cfg.cd_sweeps,
                        exact_gradient: false,
                    };
                    langevin_cd(graph, &p.data, &prior, &opts)
                },
                &sampler_gate,
                needed,
                cfg.sampler_iterations,
            )?;
            pooled(run)
        }
        Method::McBp => {
            let inits = dispersed_inits(&exact.laplace, cfg.gt_chains, seed)?;
            let prior = prior(cfg)?;
            let sd = cfg.mh_scale * 2.38 / (graph.feature_count() as f64).sqrt();
            let run = run_pooled(
                |c, iterations| {
                    let opts = MhOptions {
                        chain: chain(c, iterations, &inits),
                        proposal_sd: sd,
                        proposal_covariance: Some(exact.laplace.covariance.clone()),
                        bp_options: bp_options(cfg),
                    };
                    mh_bethe(graph, &p.data, &prior, &opts)
                },
                &sampler_gate,
                needed,
                cfg.sampler_iterations,
            )?;
            pooled(run)
        }
    }
}

/// Sampling methods accepted by [`draw_samples`].
pub const SAMPLE_METHODS: [&str; 6] = ["bl-mp", "bl-bp", "lv-cd", "mc-bp", "hmc-exact", "mh-exact"];

/// `count` posterior samples of one method for `data` on `graph`, with the
/// method's notes. Everything except `bl-bp` needs an exact backend, which
/// also tunes the samplers.
pub fn draw_samples(
    cfg: &ExperimentConfig,
    graph: &Graph,
    data: &Dataset,
    method: &str,
    count: usize,
) -> anyhow::Result<(ParameterSampleSet, Vec<String>)> {
    let cfg = ExperimentConfig {
        set_size: count,
        set_count: 1,
        ..cfg.clone()
    };
    let p = Problem {
        model_index: 0,
        x_index: 0,
        x: data.len() as f64,
        model: PairwiseBinaryModel::zeros(graph.clone()),
        data: data.clone(),
    };
    let one = |mut sets: Vec<ParameterSampleSet>| {
        sets.pop()
            .ok_or_else(|| anyhow::anyhow!("no samples drawn"))
    };
    if method == "bl-bp" {
        let fit = fit_map(graph, data, &prior(&cfg)?, &fit_options(&cfg, Backend::Bp))?;
        let out = laplace_sets(
            &cfg,
            &p,
            Method::BlBp,
            &fit.lambda_map,
            Vec::new(),
            fit.bp_failures,
        )?;
        return Ok((one(out.sets)?, out.notes));
    }
    let exact = exact_fit(&cfg, &p)?;
    match method {
        "hmc-exact" => {
            let run = ground_truth_run(&cfg, &p, &exact, tag::GROUND_TRUTH)?;
            let notes = run.notes();
            Ok((one(split_sets(&run.pool, 1, count)?)?, notes))
        }
        "mh-exact" => {
            let needed = count;
            let inits = dispersed_inits(&exact.laplace, cfg.gt_chains, cfg.seed)?;
            let prior = prior(&cfg)?;
            let gate = Gate {
                chains: cfg.gt_chains,
                threshold: cfg.mpsrf_threshold,
                extensions: cfg.mpsrf_extensions,
                resize: true,
            };
            let sd = cfg.mh_scale * 2.38 / (graph.feature_count() as f64).sqrt();
            let run = run_pooled(
                |c, iterations| {
                    let opts = MhOptions {
                        chain: ChainSettings {
                            iterations,
                            seed: seed_for(&cfg, &p, tag::GROUND_TRUTH, 1 + c as u64),
                            init: Some(inits[c].clone()),
                            ..ChainSettings::default()
                        },
                        proposal_sd: sd,
                        proposal_covariance: Some(exact.laplace.covariance.clone()),
                        bp_options: bp_options(&cfg),
                    };
                    mh_exact(graph, data, &prior, &opts)
                },
                &gate,
                needed,
                cfg.sampler_iterations,
            )?;
            let notes = run.notes();
            Ok((one(split_sets(&run.pool, 1, count)?)?, notes))
        }
        other => {
            let m: Method = other.parse().map_err(anyhow::Error::msg)?;
            let out = run_method(&cfg, &p, &exact, m)?;
            Ok((one(out.sets)?, out.notes))
        }
    }
}

fn solve(cfg: &ExperimentConfig, p: &Problem) -> Vec<Cell> {
    let all_failed = |reason: String| -> Vec<Cell> {
        std::iter::once(SELF_SCORE)
            .chain(cfg.methods.iter().map(|m| m.name()))
            .map(|m| Cell::failed(p.model_index, m, p.x, reason.clone()))
            .collect()
    };
    let exact = match exact_fit(cfg, p) {
        Ok(e) => e,
        Err(e) => return all_failed(format!("exact fit: {e}")),
    };
    let reference = match reference(cfg, p, &exact) {
        Ok(r) => r,
        Err(e) => return all_failed(format!("ground truth: {e}")),
    };
    let mut cells = vec![reference.self_cell];
    for &method in &cfg.methods {
        let start = Instant::now();
        let result = run_method(cfg, p, &exact, method)
            .and_then(|out| pairwise_scores(&out.sets, &reference.sets).map(|s| (out, s)));
        let cell = match result {
            Ok((out, scores)) => Cell {
                model: p.model_index,
                method: method.name().into(),
                x: p.x,
                scores,
                status: if out.flagged {
                    Status::Flagged
                } else {
                    Status::Ok
                },
                notes: out.notes,
                bp_failures: out.bp_failures,
                mpsrf: out.mpsrf,
                wall_seconds: start.elapsed().as_secs_f64(),
            },
            Err(e) => {
                let mut c = Cell::failed(p.model_index, method.name(), p.x, e.to_string());
                if let bethe_core::Error::BpNotConverged(_) = e {
                    c.notes.push("bp-nonconvergence".into());
                    c.bp_failures = 1;
                }
                c.wall_seconds = start.elapsed().as_secs_f64();
                c
            }
        };
        cells.push(cell);
    }
    cells
}

fn solve_all(cfg: &ExperimentConfig, problems: &[Problem]) -> Vec<Cell> {
    let mut cells: Vec<Cell> = problems
        .par_iter()
        .flat_map_iter(|p| solve(cfg, p))
        .collect();
    cells.sort_by(|a, b| {
        a.model
            .cmp(&b.model)
            .then(a.x.total_cmp(&b.x))
            .then(method_rank(&a.method).cmp(&method_rank(&b.method)))
    });
    cells
}

fn method_rank(name: &str) -> usize {
    Method::ALL
        .iter()
        .position(|m| m.name() == name)
        .map_or(0, |i| i + 1)
}

fn grid(cfg: &ExperimentConfig) -> bethe_core::Result<Graph> {
    grid_graph(cfg.rows, cfg.cols)
}

/// Spin parameters drawn i.i.d. from `N(0, variance)`.
pub fn random_spin_model(
    graph: &Graph,
    variance: f64,
    seed: u64,
) -> bethe_core::Result<PairwiseBinaryModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, variance.sqrt())
        .map_err(|e| bethe_core::Error::InvalidArgument(e.to_string()))?;
    let theta: Vec<f64> = (0..graph.node_count())
        .map(|_| normal.sample(&mut rng))
        .collect();
    let w: Vec<f64> = (0..graph.edge_count())
        .map(|_| normal.sample(&mut rng))
        .collect();
    convert_spin_model(&theta, &w, graph.clone())
}

/// Spin weights uniform on `[-d-ε, -d] ∪ [d, d+ε]` and every spin bias equal to `bias`.
pub fn interval_spin_model(
    graph: &Graph,
    d: f64,
    epsilon: f64,
    bias: f64,
    seed: u64,
) -> bethe_core::Result<PairwiseBinaryModel> {
    if !(d > 0.0) || !(epsilon > 0.0) {
        return Err(bethe_core::Error::InvalidArgument(
            "interval law needs d > 0 and epsilon > 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..graph.edge_count())
        .map(|_| {
            let magnitude = d + epsilon * rng.random::<f64>();
            if rng.random::<bool>() {
                magnitude
            } else {
                -magnitude
            }
        })
        .collect();
    convert_spin_model(&vec![bias; graph.node_count()], &w, graph.clone())
}

/// Posterior accuracy of every configured method against exact ground truth,
/// for several random models and data sizes.
pub fn run_grid_experiment(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentReport> {
    anyhow::ensure!(
        cfg.kind == ExperimentKind::GridPosterior,
        "config is not a grid experiment"
    );
    cfg.validate().map_err(anyhow::Error::msg)?;
    let graph = grid(cfg)?;
    let max_n = *cfg.n_list.iter().max().expect("validated");
    let mut problems = Vec::new();
    for m in 0..cfg.models {
        let model = random_spin_model(
            &graph,
            cfg.param_variance,
            cell_seed(cfg.seed, &[tag::GRID, m as u64, tag::PARAMS]),
        )?;
        let data = exact_sample(
            &model,
            max_n,
            cell_seed(cfg.seed, &[tag::GRID, m as u64, tag::DATA]),
        )?;
        for (k, &n) in cfg.n_list.iter().enumerate() {
            problems.push(Problem {
                model_index: m,
                x_index: k,
                x: n as f64,
                model: model.clone(),
                data: data.truncated(n),
            });
        }
    }
    let cells = solve_all(cfg, &problems);
    let mut report = ExperimentReport {
        kind: cfg.kind,
        settings: cfg.describe(),
        x_name: "n",
        cells,
        trends: Vec::new(),
        predictions: Vec::new(),
    };
    report.trends = grid_trends(&report);
    Ok(report)
}

fn grid_trends(report: &ExperimentReport) -> Vec<Trend> {
    let xs = report.xs();
    let mut trends = Vec::new();
    let avg = |m: &str, x: f64| report.model_average(m, x);
    if xs.len() >= 2 {
        let (a, b) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        if let (Some((lo, _)), Some((hi, _))) = (avg("bl-bp", a), avg("bl-bp", b)) {
            trends.push(Trend {
                name: "bl-bp-nondecreasing-top-n".into(),
                value: hi - lo,
                holds: hi >= lo,
                detail: format!("bl-bp mean {lo:.4} at n={a}, {hi:.4} at n={b}"),
            });
        }
    }
    if let Some(&top) = xs.last() {
        if let (Some((bp, bp_se)), Some((mp, mp_se))) = (avg("bl-bp", top), avg("bl-mp", top)) {
            let sep = 2.0 * (bp_se * bp_se + mp_se * mp_se).sqrt();
            trends.push(Trend {
                name: "bl-bp-exceeds-bl-mp-at-max-n".into(),
                value: bp - mp,
                holds: bp - mp > sep,
                detail: format!("n={top}: bl-bp {bp:.4}, bl-mp {mp:.4}, 2 SE {sep:.4}"),
            });
        }
    }
    let ratios: Vec<(f64, Option<f64>)> = xs
        .iter()
        .map(|&x| {
            (
                x,
                avg("bl-mp", x)
                    .zip(avg(SELF_SCORE, x))
                    .map(|((mp, _), (s, _))| mp / s),
            )
        })
        .collect();
    if ratios.iter().any(|(_, r)| r.is_some()) {
        let worst = ratios.iter().filter_map(|(_, r)| *r).fold(0.0, f64::max);
        let detail: Vec<String> = ratios
            .iter()
            .map(|(x, r)| {
                format!(
                    "n={x}: {}",
                    r.map_or("failed".into(), |r| format!("{r:.3}"))
                )
            })
            .collect();
        trends.push(Trend {
            name: "bl-mp-within-5x-self-score".into(),
            value: worst,
            holds: ratios.iter().all(|(_, r)| r.is_some_and(|r| r <= 5.0)),
            detail: detail.join("; "),
        });
    }
    trends
}

/// Posterior accuracy as the interaction strength grows: one model per `d`.
pub fn run_strength_sweep(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentReport> {
    anyhow::ensure!(
        cfg.kind == ExperimentKind::StrengthSweep,
        "config is not a strength sweep"
    );
    cfg.validate().map_err(anyhow::Error::msg)?;
    let graph = grid(cfg)?;
    let mut problems = Vec::new();
    for (k, &d) in cfg.sweep_d.iter().enumerate() {
        let seed = cell_seed(cfg.seed, &[tag::SWEEP, 0, k as u64, tag::PARAMS]);
        let model = interval_spin_model(&graph, d, cfg.sweep_epsilon, cfg.sweep_bias, seed)?;
        let data = exact_sample(
            &model,
            cfg.sweep_n,
            cell_seed(cfg.seed, &[tag::SWEEP, 0, k as u64, tag::DATA]),
        )?;
        problems.push(Problem {
            model_index: 0,
            x_index: k,
            x: d,
            model,
            data,
        });
    }
    let cells = solve_all(cfg, &problems);
    let mut report = ExperimentReport {
        kind: cfg.kind,
        settings: cfg.describe(),
        x_name: "d",
        cells,
        trends: Vec::new(),
        predictions: Vec::new(),
    };
    report.trends = sweep_trends(&report);
    Ok(report)
}

fn sweep_trends(report: &ExperimentReport) -> Vec<Trend> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for x in report.xs() {
        let means: Vec<f64> = ["bl-mp", "bl-bp"]
            .iter()
            .filter_map(|m| report.cell(0, m, x).and_then(Cell::mean))
            .collect();
        if let Some((m, _)) = mean_se(&means) {
            xs.push(x);
            ys.push(m);
        }
    }
    let mut trends = Vec::new();
    if let Some(slope) = ols_slope(&xs, &ys) {
        let detail: Vec<String> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| format!("d={x}: {y:.4}"))
            .collect();
        trends.push(Trend {
            name: "bl-score-nondecreasing-in-d".into(),
            value: slope,
            holds: slope >= 0.0,
            detail: detail.join("; "),
        });
    }
    let failing: Vec<String> = report
        .xs()
        .into_iter()
        .filter(|&x| report.cells.iter().any(|c| c.x == x && c.bp_failures > 0))
        .map(|x| x.to_string())
        .collect();
    trends.push(Trend {
        name: "bp-nonconvergence".into(),
        value: failing.len() as f64,
        holds: true,
        detail: if failing.is_empty() {
            "none".into()
        } else {
            format!("d = {}", failing.join(", "))
        },
    });
    trends
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_law_draws_in_range() {
        let g = grid_graph(3, 3).unwrap();
        let m = interval_spin_model(&g, 0.25, 0.025, 0.0, 3).unwrap();
        // {0,1} couplings are four times the spin weights
        assert!(m.w().iter().all(|w| (1.0..=1.1 + 1e-12).contains(&w.abs())));
        assert!(m.w().iter().any(|w| *w > 0.0) && m.w().iter().any(|w| *w < 0.0));
        assert!(interval_spin_model(&g, 0.0, 0.025, 0.0, 3).is_err());
    }

    #[test]
    fn exact_covariance_matches_enumeration() {
        let g = grid_graph(2, 3).unwrap();
        let m = random_spin_model(&g, 0.25, 5).unwrap();
        let brute = brute_moments(&m).unwrap().covariance;
        assert!((exact_covariance(&m).unwrap() - &brute).amax() < 1e-12);
        // force the difference path on a grid above the enumeration limit
        let g = grid_graph(3, 6).unwrap();
        let m = random_spin_model(&g, 0.25, 6).unwrap();
        let c = exact_covariance(&m).unwrap();
        let lambda = m.lambda().to_vec();
        let (_, k0) = log_z_and_kappa(&m).unwrap();
        let mut shifted = lambda.clone();
        shifted[0] += 1e-4;
        let (_, k1) = log_z_and_kappa(&m.with_lambda(&shifted)).unwrap();
        assert!(((k1[0] - k0[0]) / 1e-4 - c[(0, 0)]).abs() < 1e-4);
        assert!((&c - c.transpose()).amax() < 1e-12);
    }
}
