//! Chain CRF experiment: posterior accuracy over training-set sizes and
//! held-out prediction error.

use std::time::Instant;

use bethe_core::bp::BpOptions;
use bethe_core::crf::{
    crf_fit_map, crf_langevin_cd, crf_mh_exact, crf_posterior, posterior_models, rerank,
    supergraph_decode, synthetic_corpus, viterbi, vote, ChainCrfModel, CrfFitOptions, Sequence,
    SequenceDataset, VoteWeighting, DEFAULT_CONSTRAINT_PENALTY,
};
use bethe_core::samplers::{ChainSettings, LangevinOptions, MhOptions};
use bethe_core::{GaussianPosterior, GaussianPrior};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{
    dispersed_inits, gaussian_sets, langevin_step, mean_se, pairwise_scores, run_pooled,
    split_sets, Cell, ExperimentReport, Gate, PooledRun, Status, Trend, SELF_SCORE,
};
use crate::config::{ExperimentConfig, ExperimentKind, Method};
use crate::io::ingest_sequences;
use crate::seeds::{cell_seed, tag};

/// Held-out labelling error of one predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub n: usize,
    pub predictor: String,
    pub errors: usize,
    pub lines: usize,
    pub rate: f64,
    /// Standard error of the per-sequence error rate.
    pub se: f64,
    /// Super-graph decodes whose components disagreed or did not converge.
    pub flagged: usize,
}

fn seed_for(cfg: &ExperimentConfig, n_index: usize, role: u64, extra: u64) -> u64 {
    cell_seed(cfg.seed, &[tag::CRF, 0, n_index as u64, role, extra])
}

fn errors(pred: &[u8], truth: &[u8]) -> usize {
    pred.iter().zip(truth).filter(|(a, b)| a != b).count()
}

/// Pools per-sequence error counts into a record.
fn record(n: usize, predictor: &str, per_seq: &[(f64, usize)], flagged: usize) -> PredictionRecord {
    let errors: f64 = per_seq.iter().map(|(e, _)| e).sum();
    let lines: usize = per_seq.iter().map(|(_, l)| l).sum();
    let rates: Vec<f64> = per_seq.iter().map(|(e, l)| e / *l as f64).collect();
    PredictionRecord {
        n,
        predictor: predictor.into(),
        errors: errors.round() as usize,
        lines,
        rate: errors / lines.max(1) as f64,
        se: mean_se(&rates).map_or(0.0, |(_, se)| se),
        flagged,
    }
}

fn truth(seq: &Sequence) -> bethe_core::Result<&[u8]> {
    seq.labels()
        .ok_or_else(|| bethe_core::Error::InvalidArgument("held-out sequence has no labels".into()))
}

/// MAP, single-sample, vote, super-graph and re-ranked predictions on `test`.
fn predict(
    n: usize,
    map: &ChainCrfModel,
    posterior: &GaussianPosterior,
    models: &[ChainCrfModel],
    test: &[Sequence],
) -> bethe_core::Result<Vec<PredictionRecord>> {
    let mut map_err = Vec::new();
    let mut single = Vec::new();
    let mut voted = Vec::new();
    let mut super_err = Vec::new();
    let mut reranked = Vec::new();
    let mut flagged = 0;
    for seq in test {
        let t = truth(seq)?;
        let l = seq.len();
        let m = viterbi(map, seq)?;
        let mut single_sum = 0.0;
        for model in models {
            single_sum += errors(&viterbi(model, seq)?, t) as f64;
        }
        let v = vote(models, seq, VoteWeighting::Majority)?;
        let s = supergraph_decode(
            models,
            seq,
            DEFAULT_CONSTRAINT_PENALTY,
            &BpOptions::default(),
        )?;
        flagged += usize::from(s.is_flagged());
        let candidates = vec![m.clone(), v.clone(), s.labels.clone()];
        let best = &candidates[rerank(posterior, seq, &candidates)?];
        map_err.push((errors(&m, t) as f64, l));
        single.push((single_sum / models.len() as f64, l));
        voted.push((errors(&v, t) as f64, l));
        super_err.push((errors(&s.labels, t) as f64, l));
        reranked.push((errors(best, t) as f64, l));
    }
    Ok(vec![
        record(n, "viterbi-map", &map_err, 0),
        record(n, "viterbi-single-sample", &single, 0),
        record(n, "vote", &voted, 0),
        record(n, "supergraph", &super_err, flagged),
        record(n, "rerank", &reranked, 0),
    ])
}

/// `k`-fold cross-validated error of the MAP Viterbi labelling; fold `f`
/// holds the sequences with index `f` mod `k`.
pub fn cross_validate_map(
    corpus: &SequenceDataset,
    prior: &GaussianPrior,
    folds: usize,
) -> bethe_core::Result<PredictionRecord> {
    if folds < 2 || folds > corpus.len() {
        return Err(bethe_core::Error::InvalidArgument(format!(
            "{folds} folds for {} sequences",
            corpus.len()
        )));
    }
    let per_fold: Vec<Vec<(f64, usize)>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<Sequence> = corpus
                .iter()
                .enumerate()
                .filter(|(i, _)| i % folds != f)
                .map(|(_, s)| s.clone())
                .collect();
            let fit = crf_fit_map(
                &SequenceDataset::new(corpus.width(), train)?,
                prior,
                &CrfFitOptions::default(),
            )?;
            let model = fit.model();
            corpus
                .iter()
                .enumerate()
                .filter(|(i, _)| i % folds == f)
                .map(|(_, s)| Ok((errors(&viterbi(&model, s)?, truth(s)?) as f64, s.len())))
                .collect()
        })
        .collect::<bethe_core::Result<_>>()?;
    Ok(record(
        corpus.len(),
        "viterbi-map-cv",
        &per_fold.concat(),
        0,
    ))
}

fn ground_truth_run(
    cfg: &ExperimentConfig,
    n_index: usize,
    data: &SequenceDataset,
    prior: &GaussianPrior,
    post: &GaussianPosterior,
    role: u64,
) -> bethe_core::Result<PooledRun> {
    let needed = cfg.set_size * cfg.set_count;
    let dim = post.dim();
    let inits = dispersed_inits(post, cfg.gt_chains, seed_for(cfg, n_index, role, 0))?;
    let gate = Gate {
        chains: cfg.gt_chains,
        threshold: cfg.mpsrf_threshold,
        extensions: cfg.mpsrf_extensions,
        resize: true,
    };
    let sd = cfg.mh_scale * 2.38 / (dim as f64).sqrt();
    // random-walk MH decorrelates in roughly 3.3 d steps at the optimal scale
    let thin_guess = (3.3 * dim as f64).ceil() as usize;
    run_pooled(
        |c, iterations| {
            let opts = MhOptions {
                chain: ChainSettings {
                    iterations,
                    seed: seed_for(cfg, n_index, role, 1 + c as u64),
                    init: Some(inits[c].clone()),
                    ..ChainSettings::default()
                },
                proposal_sd: sd,
                proposal_covariance: Some(post.covariance.clone()),
                ..MhOptions::default()
            };
            crf_mh_exact(data, prior, &opts)
        },
        &gate,
        needed,
        thin_guess * needed.div_ceil(cfg.gt_chains),
    )
}

struct CrfCellOutput {
    cells: Vec<Cell>,
    predictions: Vec<PredictionRecord>,
}

fn solve_n(
    cfg: &ExperimentConfig,
    n_index: usize,
    n: usize,
    train: &SequenceDataset,
    test: &[Sequence],
) -> CrfCellOutput {
    let x = n as f64;
    let all_failed = |reason: String| CrfCellOutput {
        cells: std::iter::once(SELF_SCORE)
            .chain(cfg.methods.iter().map(|m| m.name()))
            .map(|m| Cell::failed(0, m, x, reason.clone()))
            .collect(),
        predictions: Vec::new(),
    };
    if n > train.len() {
        return all_failed(format!(
            "subset of {n} exceeds the {} training sequences",
            train.len()
        ));
    }
    let data = train.first(n);
    let prior = match GaussianPrior::isotropic(cfg.prior_variance) {
        Ok(p) => p,
        Err(e) => return all_failed(e.to_string()),
    };
    let fit_start = Instant::now();
    let fit = match crf_fit_map(&data, &prior, &CrfFitOptions::default()) {
        Ok(f) => f,
        Err(e) => return all_failed(format!("fit: {e}")),
    };
    let post = match crf_posterior(&fit.weights, &data, &prior) {
        Ok(p) => p,
        Err(e) => return all_failed(format!("posterior: {e}")),
    };
    let fit_seconds = fit_start.elapsed().as_secs_f64();
    let start = Instant::now();
    let reference = ground_truth_run(cfg, n_index, &data, &prior, &post, tag::GROUND_TRUTH)
        .and_then(|gt| {
            let rep = ground_truth_run(cfg, n_index, &data, &prior, &post, tag::REPLICATE)?;
            let sets = split_sets(&gt.pool, cfg.set_count, cfg.set_size)?;
            let rep_sets = split_sets(&rep.pool, cfg.set_count, cfg.set_size)?;
            let scores = pairwise_scores(&rep_sets, &sets)?;
            Ok((gt, rep, sets, scores))
        });
    let (gt, rep, gt_sets, self_scores) = match reference {
        Ok(r) => r,
        Err(e) => return all_failed(format!("ground truth: {e}")),
    };
    let mut notes = gt.notes();
    notes.extend(rep.notes().into_iter().map(|s| format!("replicate-{s}")));
    let mut cells = vec![Cell {
        model: 0,
        method: SELF_SCORE.into(),
        x,
        scores: self_scores,
        status: if gt.converged && rep.converged && !gt.under_thinned && !rep.under_thinned {
            Status::Ok
        } else {
            Status::Flagged
        },
        notes,
        bp_failures: 0,
        mpsrf: Some(gt.mpsrf.max(rep.mpsrf)),
        wall_seconds: start.elapsed().as_secs_f64(),
    }];
    for &method in &cfg.methods {
        let start = Instant::now();
        let seed = seed_for(cfg, n_index, tag::METHOD, method.index());
        let out: bethe_core::Result<(Vec<_>, Vec<String>, bool, Option<f64>)> = match method {
            Method::BlMp => gaussian_sets(&post, cfg.set_count, cfg.set_size, seed, method.name())
                .map(|s| {
                    let mut notes = vec![format!("fit-iterations={}", fit.iterations)];
                    if !fit.converged {
                        notes.push("fit-unconverged".into());
                    }
                    (s, notes, !fit.converged, None)
                }),
            Method::LvCd => {
                let gate = Gate {
                    chains: cfg.gt_chains,
                    threshold: cfg.mpsrf_threshold,
                    extensions: 0,
                    resize: false,
                };
                let step = langevin_step(cfg, &post);
                dispersed_inits(&post, cfg.gt_chains, seed).and_then(|inits| {
                    let run = run_pooled(
                        |c, iterations| {
                            let opts = LangevinOptions {
                                chain: ChainSettings {
                                    iterations,
                                    seed: seed_for(
                                        cfg,
                                        n_index,
                                        tag::METHOD,
                                        16 * method.index() + 1 + c as u64,
                                    ),
                                    init: Some(inits[c].clone()),
                                    ..ChainSettings::default()
                                },
                                step_size: step,
                                cd_sweeps: cfg.cd_sweeps,
                                exact_gradient: false,
                            };
                            crf_langevin_cd(&data, &prior, &opts)
                        },
                        &gate,
                        cfg.set_size * cfg.set_count,
                        cfg.sampler_iterations,
                    )?;
                    let mut sets = split_sets(&run.pool, cfg.set_count, cfg.set_size)?;
                    for s in &mut sets {
                        s.provenance.method = method.name().into();
                    }
                    Ok((
                        sets,
                        run.notes(),
                        !run.converged || run.under_thinned,
                        Some(run.mpsrf),
                    ))
                })
            }
            Method::BlBp | Method::McBp => Err(bethe_core::Error::InvalidArgument(format!(
                "{} does not apply to chain CRFs",
                method.name()
            ))),
        };
        let cell = match out.and_then(|o| pairwise_scores(&o.0, &gt_sets).map(|s| (o, s))) {
            Ok(((_, notes, flagged, mpsrf), scores)) => Cell {
                model: 0,
                method: method.name().into(),
                x,
                scores,
                status: if flagged { Status::Flagged } else { Status::Ok },
                notes,
                bp_failures: 0,
                mpsrf,
                wall_seconds: start.elapsed().as_secs_f64()
                    + if method == Method::BlMp {
                        fit_seconds
                    } else {
                        0.0
                    },
            },
            Err(e) => Cell::failed(0, method.name(), x, e.to_string()),
        };
        cells.push(cell);
    }
    let predictions = if test.is_empty() {
        Vec::new()
    } else {
        let models = posterior_models(
            &post,
            cfg.crf_vote_samples,
            seed_for(cfg, n_index, tag::PREDICT, 0),
        );
        match models.and_then(|m| predict(n, &fit.model(), &post, &m, test)) {
            Ok(p) => p,
            Err(e) => {
                cells.push(Cell::failed(0, "prediction", x, e.to_string()));
                Vec::new()
            }
        }
    };
    CrfCellOutput { cells, predictions }
}

/// Weights of the generating CRF: i.i.d. `N(0, sd²)`.
pub fn random_crf(width: usize, sd: f64, seed: u64) -> bethe_core::Result<ChainCrfModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal =
        Normal::new(0.0, sd).map_err(|e| bethe_core::Error::InvalidArgument(e.to_string()))?;
    ChainCrfModel::new(
        width,
        (0..2 * width).map(|_| normal.sample(&mut rng)).collect(),
    )
}

/// The training pool and held-out sequences: an ingested corpus or a
/// synthetic one drawn from a random CRF.
pub fn crf_corpus(cfg: &ExperimentConfig) -> anyhow::Result<(SequenceDataset, Vec<Sequence>)> {
    match &cfg.crf_corpus {
        Some(path) => {
            let corpus = ingest_sequences(path, cfg.crf_width, cfg.max_length)?;
            anyhow::ensure!(
                corpus.is_labelled(),
                "{} has unlabelled sequences",
                path.display()
            );
            Ok((corpus, Vec::new()))
        }
        None => {
            let truth = random_crf(
                cfg.crf_width,
                cfg.crf_weight_sd,
                cell_seed(cfg.seed, &[tag::CRF, tag::PARAMS]),
            )?;
            let len = cfg.crf_length.min(cfg.max_length);
            let train = synthetic_corpus(
                &truth,
                cfg.crf_sequences,
                len,
                cfg.crf_density,
                cell_seed(cfg.seed, &[tag::CRF, tag::DATA]),
            )?;
            let test = if cfg.crf_test == 0 {
                Vec::new()
            } else {
                synthetic_corpus(
                    &truth,
                    cfg.crf_test,
                    len,
                    cfg.crf_density,
                    cell_seed(cfg.seed, &[tag::CRF, tag::TEST]),
                )?
                .sequences()
                .to_vec()
            };
            Ok((train, test))
        }
    }
}

/// Fits, scores and predicts for every training-set size.
pub fn run_crf_experiment(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentReport> {
    anyhow::ensure!(
        cfg.kind == ExperimentKind::Crf,
        "config is not a CRF experiment"
    );
    cfg.validate().map_err(anyhow::Error::msg)?;
    let (train, synthetic_test) = crf_corpus(cfg)?;
    let ingested = cfg.crf_corpus.is_some();
    let outputs: Vec<CrfCellOutput> = cfg
        .crf_n_list
        .par_iter()
        .enumerate()
        .map(|(k, &n)| {
            // an ingested corpus predicts on the sequences outside the subset
            let test: Vec<Sequence> = if ingested {
                train.sequences().iter().skip(n).cloned().collect()
            } else {
                synthetic_test.clone()
            };
            solve_n(cfg, k, n, &train, &test)
        })
        .collect();
    let mut cells = Vec::new();
    let mut predictions = Vec::new();
    for o in outputs {
        cells.extend(o.cells);
        predictions.extend(o.predictions);
    }
    if ingested {
        let prior = GaussianPrior::isotropic(cfg.prior_variance)?;
        match cross_validate_map(&train, &prior, cfg.crf_folds.min(train.len())) {
            Ok(r) => predictions.push(r),
            Err(e) => cells.push(Cell::failed(
                0,
                "cross-validation",
                train.len() as f64,
                e.to_string(),
            )),
        }
    }
    let trends = crf_trends(&predictions);
    Ok(ExperimentReport {
        kind: cfg.kind,
        settings: cfg.describe(),
        x_name: "n",
        cells,
        trends,
        predictions,
    })
}

fn crf_trends(predictions: &[PredictionRecord]) -> Vec<Trend> {
    let mut ns: Vec<usize> = predictions.iter().map(|p| p.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let find = |n: usize, name: &str| predictions.iter().find(|p| p.n == n && p.predictor == name);
    let mut trends = Vec::new();
    for n in ns {
        if let (Some(v), Some(s)) = (find(n, "vote"), find(n, "viterbi-single-sample")) {
            let bound = s.rate + 2.0 * s.se;
            trends.push(Trend {
                name: format!("vote-within-single-sample-viterbi-n{n}"),
                value: v.rate - s.rate,
                holds: v.rate <= bound,
                detail: format!(
                    "vote {:.4}, single-sample viterbi {:.4} + 2 SE = {bound:.4}",
                    v.rate, s.rate
                ),
            });
        }
    }
    trends
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_pool_errors() {
        let r = record(3, "p", &[(1.0, 10), (0.0, 10), (2.0, 20)], 0);
        assert_eq!((r.errors, r.lines), (3, 40));
        assert!((r.rate - 0.075).abs() < 1e-12);
        assert!(r.se > 0.0);
    }

    #[test]
    fn cross_validation_learns_an_easy_task() {
        let truth = ChainCrfModel::new(2, vec![3.0, -1.5, 0.0, 0.0]).unwrap();
        let corpus = synthetic_corpus(&truth, 12, 15, 0.5, 4).unwrap();
        let prior = GaussianPrior::isotropic(10.0).unwrap();
        let r = cross_validate_map(&corpus, &prior, 3).unwrap();
        assert_eq!(r.lines, 180);
        assert!(r.rate < 0.3, "{r:?}");
        assert!(cross_validate_map(&corpus, &prior, 1).is_err());
        assert!(cross_validate_map(&corpus, &prior, 13).is_err());
    }
}
