use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bp::BpOptions;
use crate::exact::brute_log_z;
use crate::graph::{log_unnormalized, GaussianPrior};
use crate::posterior::GaussianPosterior;

fn labelling(bits: usize, l: usize) -> Vec<u8> {
    (0..l).map(|i| ((bits >> (l - 1 - i)) & 1) as u8).collect()
}

/// All labellings with their probabilities, in lexicographic order.
fn enumerate(model: &ChainCrfModel, seq: &Sequence) -> (Vec<Vec<u8>>, Vec<f64>, f64) {
    let l = seq.len();
    let all: Vec<Vec<u8>> = (0..1usize << l).map(|b| labelling(b, l)).collect();
    let scores: Vec<f64> = all.iter().map(|t| model.score(seq, t).unwrap()).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let p = scores.iter().map(|s| (s - max).exp() / z).collect();
    (all, p, max + z.ln())
}

fn statistics(t: &[u8]) -> Vec<f64> {
    let mut s: Vec<f64> = t.iter().map(|&v| f64::from(v)).collect();
    s.extend(t.windows(2).map(|w| f64::from(w[0] & w[1])));
    s
}

fn brute_statistics_covariance(model: &ChainCrfModel, seq: &Sequence) -> DMatrix<f64> {
    let (all, p, _) = enumerate(model, seq);
    let d = 2 * seq.len() - 1;
    let mut mean = vec![0.0; d];
    let mut second = DMatrix::<f64>::zeros(d, d);
    for (t, &w) in all.iter().zip(&p) {
        let s = statistics(t);
        for a in 0..d {
            mean[a] += w * s[a];
            for b in 0..d {
                second[(a, b)] += w * s[a] * s[b];
            }
        }
    }
    DMatrix::from_fn(d, d, |a, b| second[(a, b)] - mean[a] * mean[b])
}

fn brute_tied_covariance(model: &ChainCrfModel, seq: &Sequence) -> DMatrix<f64> {
    let (all, p, _) = enumerate(model, seq);
    let d = 2 * seq.width();
    let feats: Vec<Vec<f64>> = all.iter().map(|t| tied_features(seq, t).unwrap()).collect();
    let mean: Vec<f64> = (0..d)
        .map(|a| feats.iter().zip(&p).map(|(f, w)| w * f[a]).sum())
        .collect();
    DMatrix::from_fn(d, d, |a, b| {
        feats
            .iter()
            .zip(&p)
            .map(|(f, w)| w * (f[a] - mean[a]) * (f[b] - mean[b]))
            .sum()
    })
}

fn random_case(
    width: usize,
    len: usize,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> (ChainCrfModel, Sequence) {
    let weights = (0..2 * width)
        .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    let model = ChainCrfModel::new(width, weights).unwrap();
    let seq = random_features(width, len, 0.5, rng).unwrap();
    (model, seq)
}

fn point_posterior(weights: Vec<f64>, precision: f64) -> GaussianPosterior {
    let d = weights.len();
    GaussianPosterior {
        mean: weights,
        covariance: DMatrix::identity(d, d) / precision,
        precision: DMatrix::identity(d, d) * precision,
        factor: DMatrix::identity(d, d) / precision.sqrt(),
        jitter_applied: false,
    }
}

#[test]
fn sequence_validation() {
    assert!(Sequence::new(2, vec![1, 0, 1], None).is_err());
    assert!(Sequence::new(2, vec![1, 2], None).is_err());
    assert!(Sequence::new(2, vec![1, 0, 1, 1], Some(vec![1])).is_err());
    let s =
        Sequence::from_rows(&[vec![1, 0], vec![0, 1], vec![1, 1]], Some(vec![0, 1, 1])).unwrap();
    assert_eq!(s.len(), 3);
    assert_eq!(s.g(1), &[0, 1]);
    let t = s.truncated(2);
    assert_eq!(t.len(), 2);
    assert_eq!(t.labels(), Some(&[0u8, 1][..]));
    assert!(ChainCrfModel::new(2, vec![0.0; 3]).is_err());
}

#[test]
fn tied_features_count_states_and_transitions() {
    let s = Sequence::from_rows(&[vec![1, 0], vec![1, 1], vec![0, 1]], None).unwrap();
    assert_eq!(
        tied_features(&s, &[1, 1, 1]).unwrap(),
        vec![2.0, 2.0, 2.0, 1.0]
    );
    assert_eq!(
        tied_features(&s, &[0, 1, 1]).unwrap(),
        vec![1.0, 2.0, 1.0, 1.0]
    );
    let m = tying_matrix_for(&s);
    let u = DMatrix::from_column_slice(5, 1, &statistics(&[0, 1, 1]));
    assert_eq!((m * u).as_slice(), &[1.0, 2.0, 1.0, 1.0]);
}

#[test]
fn forward_backward_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for len in 1..=7 {
        let (model, seq) = random_case(3, len, 2.0, &mut rng);
        let fb = forward_backward(&model, &seq).unwrap();
        let (all, p, log_z) = enumerate(&model, &seq);
        assert!((fb.log_z - log_z).abs() < 1e-10);
        for i in 0..len {
            let q: f64 = all
                .iter()
                .zip(&p)
                .filter(|(t, _)| t[i] == 1)
                .map(|(_, w)| w)
                .sum();
            assert!((fb.q[i] - q).abs() < 1e-10);
        }
        for i in 0..len - 1 {
            let xi: f64 = all
                .iter()
                .zip(&p)
                .filter(|(t, _)| t[i] == 1 && t[i + 1] == 1)
                .map(|(_, w)| w)
                .sum();
            assert!((fb.xi[i] - xi).abs() < 1e-10);
        }
    }
}

#[test]
fn log_z_matches_pairwise_model_on_a_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (model, seq) = random_case(4, 6, 1.5, &mut rng);
    let (h, j) = model.fields(&seq).unwrap();
    let edges: Vec<(usize, usize)> = (0..5).map(|i| (i, i + 1)).collect();
    let graph = crate::graph::build_graph(6, &edges).unwrap();
    let mrf = crate::graph::PairwiseBinaryModel::new(graph, &h, &j).unwrap();
    let fb = forward_backward(&model, &seq).unwrap();
    assert!((fb.log_z - brute_log_z(&mrf).unwrap()).abs() < 1e-10);
}

#[test]
fn log_z_gradient_is_expected_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (model, seq) = random_case(3, 5, 1.0, &mut rng);
    let kappa = expected_features(&model, &seq).unwrap();
    let h = 1e-6;
    for k in 0..6 {
        let mut up = model.weights().to_vec();
        let mut down = up.clone();
        up[k] += h;
        down[k] -= h;
        let lz = |w: Vec<f64>| {
            forward_backward(&ChainCrfModel::new(3, w).unwrap(), &seq)
                .unwrap()
                .log_z
        };
        let fd = (lz(up) - lz(down)) / (2.0 * h);
        assert!(
            (fd - kappa[k]).abs() < 1e-7,
            "component {k}: {fd} vs {}",
            kappa[k]
        );
    }
}

#[test]
fn label_covariance_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for len in 1..=8 {
        for scale in [0.5, 3.0] {
            let (model, seq) = random_case(3, len, scale, &mut rng);
            let (c, _) = label_statistics_covariance(&model, &seq).unwrap();
            let brute = brute_statistics_covariance(&model, &seq);
            assert!((c - brute).amax() < 1e-8, "len {len}");
        }
    }
}

#[test]
fn tied_covariance_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for len in [1, 3, 6] {
        let (model, seq) = random_case(4, len, 1.5, &mut rng);
        let c = case_covariance(&model, &seq).unwrap();
        assert_eq!(c.nrows(), 8);
        assert!((c - brute_tied_covariance(&model, &seq)).amax() < 1e-8);
    }
}

#[test]
fn covariance_survives_saturated_labels() {
    let seq = Sequence::from_rows(&[vec![1], vec![1], vec![1]], None).unwrap();
    let model = ChainCrfModel::new(1, vec![800.0, 0.0]).unwrap();
    let (c, mean) = label_statistics_covariance(&model, &seq).unwrap();
    assert!(c.iter().all(|v| v.is_finite() && v.abs() < 1e-12));
    assert!(mean.iter().all(|m| (m - 1.0).abs() < 1e-12));
}

#[test]
fn viterbi_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let len = rng.random_range(1..=7);
        let (model, seq) = random_case(3, len, 2.0, &mut rng);
        let (all, p, _) = enumerate(&model, &seq);
        let mut best = 0;
        for k in 1..all.len() {
            if p[k] > p[best] {
                best = k;
            }
        }
        assert_eq!(viterbi(&model, &seq).unwrap(), all[best]);
    }
}

#[test]
fn viterbi_ties_go_to_zero() {
    let seq = Sequence::from_rows(&[vec![1], vec![1], vec![1]], None).unwrap();
    assert_eq!(
        viterbi(&ChainCrfModel::zeros(1), &seq).unwrap(),
        vec![0, 0, 0]
    );
    // 11 and 00 tie on a two-line sequence: h = -1 on both, J = 2
    let seq = Sequence::from_rows(&[vec![1], vec![1]], None).unwrap();
    let model = ChainCrfModel::new(1, vec![-1.0, 2.0]).unwrap();
    assert_eq!(viterbi(&model, &seq).unwrap(), vec![0, 0]);
}

#[test]
fn single_vote_is_viterbi() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (model, seq) = random_case(3, 6, 2.0, &mut rng);
    let v = viterbi(&model, &seq).unwrap();
    assert_eq!(
        vote(core::slice::from_ref(&model), &seq, VoteWeighting::Majority).unwrap(),
        v
    );
    let post = point_posterior(model.weights().to_vec(), 1e16);
    assert_eq!(
        predict_vote(&post, &seq, 1, 0, VoteWeighting::Majority).unwrap(),
        v
    );
}

#[test]
fn majority_vote_breaks_even_ties_to_zero() {
    let seq = Sequence::from_rows(&[vec![1]], None).unwrap();
    let up = ChainCrfModel::new(1, vec![1.0, 0.0]).unwrap();
    let down = ChainCrfModel::new(1, vec![-1.0, 0.0]).unwrap();
    assert_eq!(
        vote(&[up.clone(), down.clone()], &seq, VoteWeighting::Majority).unwrap(),
        vec![0]
    );
    assert_eq!(
        vote(&[up.clone(), up, down], &seq, VoteWeighting::Majority).unwrap(),
        vec![1]
    );
}

#[test]
fn probability_vote_follows_the_confident_model() {
    let seq = Sequence::from_rows(&[vec![1]], None).unwrap();
    let strong = ChainCrfModel::new(1, vec![5.0, 0.0]).unwrap();
    let weak = ChainCrfModel::new(1, vec![-0.2, 0.0]).unwrap();
    let models = [strong, weak.clone(), weak];
    assert_eq!(
        vote(&models, &seq, VoteWeighting::Majority).unwrap(),
        vec![0]
    );
    assert_eq!(
        vote(&models, &seq, VoteWeighting::Probability).unwrap(),
        vec![1]
    );
}

#[test]
fn single_copy_supergraph_is_viterbi() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let len = rng.random_range(1..=10);
        let (model, seq) = random_case(3, len, 2.0, &mut rng);
        let d = supergraph_decode(
            core::slice::from_ref(&model),
            &seq,
            DEFAULT_CONSTRAINT_PENALTY,
            &BpOptions::default(),
        )
        .unwrap();
        assert!(d.converged && d.agreement);
        assert_eq!(d.labels, viterbi(&model, &seq).unwrap());
    }
}

#[test]
fn supergraph_penalty_matches_disagreement_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let models: Vec<ChainCrfModel> = (0..2).map(|_| random_case(2, 3, 1.0, &mut rng).0).collect();
    let seq = random_features(2, 3, 0.5, &mut rng).unwrap();
    let joint = supergraph_model(&models, &seq, 7.0).unwrap();
    for bits in 0..64usize {
        let x = labelling(bits, 6);
        let direct = models[0].score(&seq, &x[..3]).unwrap()
            + models[1].score(&seq, &x[3..]).unwrap()
            - 7.0 * (0..3).filter(|&i| x[i] != x[3 + i]).count() as f64;
        assert!(
            (log_unnormalized(&joint, &x).unwrap() - direct).abs() < 1e-12,
            "{x:?} {} {direct}",
            log_unnormalized(&joint, &x).unwrap()
        );
    }
}

#[test]
fn supergraph_follows_confident_model() {
    // one model confidently labels every line 1; two weak models lean to 0
    let seq = Sequence::from_rows(&[vec![1, 0], vec![1, 1], vec![1, 0], vec![1, 1]], None).unwrap();
    let strong = ChainCrfModel::new(2, vec![4.0, 1.0, 0.5, 0.0]).unwrap();
    let weak = ChainCrfModel::new(2, vec![-0.6, -0.2, 0.1, 0.0]).unwrap();
    let models = [weak.clone(), strong, weak];
    assert_eq!(
        vote(&models, &seq, VoteWeighting::Majority).unwrap(),
        vec![0, 0, 0, 0]
    );
    let d = supergraph_decode(
        &models,
        &seq,
        DEFAULT_CONSTRAINT_PENALTY,
        &BpOptions::default(),
    )
    .unwrap();
    let joint = supergraph_model(&models, &seq, DEFAULT_CONSTRAINT_PENALTY).unwrap();
    let n = 12;
    let best = (0..1usize << n)
        .map(|b| labelling(b, n))
        .max_by(|a, b| {
            log_unnormalized(&joint, a)
                .unwrap()
                .partial_cmp(&log_unnormalized(&joint, b).unwrap())
                .unwrap()
        })
        .unwrap();
    assert!(d.converged && d.agreement && !d.is_flagged());
    assert_eq!(d.labels, best[..4].to_vec());
    assert_eq!(d.labels, vec![1, 1, 1, 1]);
}

#[test]
fn corrected_objective_reduces_to_map_score() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (model, seq) = random_case(3, 5, 1.0, &mut rng);
    let post = point_posterior(model.weights().to_vec(), 1e12);
    for bits in 0..32 {
        let t = labelling(bits, 5);
        let g = corrected_objective(&post, &seq, &t).unwrap();
        assert!((g - model.score(&seq, &t).unwrap()).abs() < 1e-9);
    }
}

#[test]
fn correction_vanishes_at_expected_features() {
    // with no features active every labelling has f = E[f] = 0
    let seq = Sequence::from_rows(&[vec![0, 0], vec![0, 0]], None).unwrap();
    let post = point_posterior(vec![0.3, -0.1, 0.7, 0.2], 1.0);
    for bits in 0..4 {
        assert_eq!(
            correction_term(&post, &seq, &labelling(bits, 2)).unwrap(),
            0.0
        );
    }
}

#[test]
fn correction_is_non_negative_and_can_change_the_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (model, seq) = random_case(3, 4, 1.0, &mut rng);
    let post = point_posterior(model.weights().to_vec(), 0.01);
    let candidates: Vec<Vec<u8>> = (0..16).map(|b| labelling(b, 4)).collect();
    for t in &candidates {
        assert!(correction_term(&post, &seq, t).unwrap() >= 0.0);
    }
    let map = viterbi(&model, &seq).unwrap();
    let best = rerank(
        &point_posterior(model.weights().to_vec(), 1e12),
        &seq,
        &candidates,
    )
    .unwrap();
    assert_eq!(candidates[best], map);
}

#[test]
fn sampled_labels_follow_the_conditional() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (model, seq) = random_case(2, 3, 1.5, &mut rng);
    let (_, p, _) = enumerate(&model, &seq);
    let n = 40_000;
    let mut counts = [0usize; 8];
    for _ in 0..n {
        let t = sample_labels(&model, &seq, &mut rng).unwrap();
        counts[usize::from(t[0]) * 4 + usize::from(t[1]) * 2 + usize::from(t[2])] += 1;
    }
    for k in 0..8 {
        let f = counts[k] as f64 / n as f64;
        let se = (p[k] * (1.0 - p[k]) / n as f64).sqrt();
        assert!(
            (f - p[k]).abs() < 5.0 * se + 1e-4,
            "cell {k}: {f} vs {}",
            p[k]
        );
    }
}

#[test]
fn balanced_independent_labels_fit_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut sequences = Vec::new();
    for _ in 0..4 {
        let seq = random_features(3, 3, 0.5, &mut rng).unwrap();
        for bits in 0..8 {
            sequences.push(seq.with_labels(Some(labelling(bits, 3))).unwrap());
        }
    }
    let data = SequenceDataset::new(3, sequences).unwrap();
    let fit = crf_fit_map(
        &data,
        &GaussianPrior::isotropic(1.0).unwrap(),
        &CrfFitOptions::default(),
    )
    .unwrap();
    assert!(fit.converged);
    assert!(
        fit.weights.iter().all(|w| w.abs() < 1e-6),
        "{:?}",
        fit.weights
    );
}

#[test]
fn fit_requires_labels_and_matching_prior() {
    let seq = Sequence::from_rows(&[vec![1, 0]], None).unwrap();
    let data = SequenceDataset::new(2, vec![seq.clone()]).unwrap();
    let prior = GaussianPrior::isotropic(1.0).unwrap();
    assert!(crf_fit_map(&data, &prior, &CrfFitOptions::default()).is_err());
    let labelled = SequenceDataset::new(2, vec![seq.with_labels(Some(vec![1])).unwrap()]).unwrap();
    assert!(crf_fit_map(
        &labelled,
        &GaussianPrior::full(DMatrix::identity(3, 3)).unwrap(),
        &CrfFitOptions::default()
    )
    .is_err());
    assert!(crf_fit_map(
        &SequenceDataset::new(2, vec![]).unwrap(),
        &prior,
        &CrfFitOptions::default()
    )
    .is_err());
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let truth = ChainCrfModel::new(2, vec![0.5, -1.0, 1.0, 0.3]).unwrap();
    let data = synthetic_corpus(&truth, 20, 5, 0.5, 14).unwrap();
    let prior = GaussianPrior::isotropic(2.0).unwrap();
    let x = [0.1, -0.2, 0.3, 0.05];
    let (_, g) = crf_objective(&x, &data, &prior).unwrap();
    let h = 1e-6;
    for k in 0..4 {
        let mut up = x.to_vec();
        let mut down = x.to_vec();
        up[k] += h;
        down[k] -= h;
        let fd = (crf_objective(&up, &data, &prior).unwrap().0
            - crf_objective(&down, &data, &prior).unwrap().0)
            / (2.0 * h);
        assert!((fd - g[k]).abs() < 1e-7);
    }
}

#[test]
fn recovers_generating_weights() {
    let truth = ChainCrfModel::new(3, vec![-0.5, 1.2, -0.8, 0.6, 1.0, -0.7]).unwrap();
    let data = synthetic_corpus(&truth, 3000, 20, 0.5, 15).unwrap();
    let prior = GaussianPrior::isotropic(100.0).unwrap();
    let fit = crf_fit_map(&data, &prior, &CrfFitOptions::default()).unwrap();
    assert!(
        fit.converged,
        "{} {} {:?}",
        fit.iterations, fit.grad_norm, fit.weights
    );
    let err: f64 = fit
        .weights
        .iter()
        .zip(truth.weights())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = truth.weights().iter().map(|w| w * w).sum::<f64>().sqrt();
    assert!(err / norm < 0.1, "relative error {}", err / norm);
}

#[test]
fn posterior_precision_is_summed_case_covariance() {
    let truth = ChainCrfModel::new(2, vec![0.4, -0.6, 0.8, 0.2]).unwrap();
    let data = synthetic_corpus(&truth, 30, 6, 0.5, 16).unwrap();
    let prior = GaussianPrior::isotropic(1.0).unwrap();
    let fit = crf_fit_map(&data, &prior, &CrfFitOptions::default()).unwrap();
    let post = crf_posterior(&fit.weights, &data, &prior).unwrap();
    let mut expected = DMatrix::<f64>::identity(4, 4);
    for seq in data.iter() {
        expected += case_covariance(&fit.model(), seq).unwrap();
    }
    assert!((post.precision - expected).amax() < 1e-9);
    assert_eq!(post.mean, fit.weights);
}

#[test]
fn exact_posterior_gradient_is_consistent() {
    use crate::samplers::{GradLogDensity, LogDensity};
    let truth = ChainCrfModel::new(2, vec![0.4, -0.6, 0.8, 0.2]).unwrap();
    let data = synthetic_corpus(&truth, 10, 4, 0.5, 17).unwrap();
    let prior = GaussianPrior::isotropic(1.0).unwrap();
    let mut target = CrfExactPosterior::new(&data, &prior).unwrap();
    let x = [0.2, 0.1, -0.3, 0.4];
    let (v, g) = target.log_density_and_grad(&x).unwrap().unwrap();
    assert!((v - target.log_density(&x).unwrap().unwrap()).abs() < 1e-9);
    let (vn, gn) = crf_objective(&x, &data, &prior).unwrap();
    assert!((v - 10.0 * vn).abs() < 1e-9);
    assert!(g.iter().zip(&gn).all(|(a, b)| (a - 10.0 * b).abs() < 1e-9));
}

#[test]
fn cd_gradient_vanishes_in_expectation_at_the_truth() {
    use crate::samplers::GradientEstimator;
    let truth = ChainCrfModel::new(2, vec![0.5, -0.5, 0.8, 0.3]).unwrap();
    let data = synthetic_corpus(&truth, 400, 10, 0.5, 18).unwrap();
    let prior = GaussianPrior::isotropic(1e6).unwrap();
    let mut est = CrfCdGradient::new(&data, &prior, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let reps = 50;
    let mut mean = vec![0.0; 4];
    for _ in 0..reps {
        for (m, g) in mean
            .iter_mut()
            .zip(est.estimate(truth.weights(), &mut rng).unwrap())
        {
            *m += g / (reps as f64 * data.len() as f64);
        }
    }
    assert!(mean.iter().all(|m| m.abs() < 0.05), "{mean:?}");
}

#[test]
fn mh_on_exact_posterior_matches_laplace_for_large_n() {
    use crate::samplers::{ChainSettings, MhOptions};
    let truth = ChainCrfModel::new(1, vec![0.5, 0.8]).unwrap();
    let data = synthetic_corpus(&truth, 300, 10, 0.5, 20).unwrap();
    let prior = GaussianPrior::isotropic(100.0).unwrap();
    let fit = crf_fit_map(&data, &prior, &CrfFitOptions::default()).unwrap();
    let post = crf_posterior(&fit.weights, &data, &prior).unwrap();
    let opts = MhOptions {
        chain: ChainSettings {
            iterations: 20_000,
            seed: 3,
            init: Some(fit.weights.clone()),
            ..Default::default()
        },
        proposal_sd: 1.0,
        proposal_covariance: Some(post.covariance.clone()),
        ..Default::default()
    };
    let chain = crf_mh_exact(&data, &prior, &opts).unwrap();
    let mean = chain.mean();
    for k in 0..2 {
        let sd = post.covariance[(k, k)].sqrt();
        assert!((mean[k] - post.mean[k]).abs() < 0.2 * sd, "coordinate {k}");
        let col = chain.column(k);
        let var = col.iter().map(|v| (v - mean[k]).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(
            (var.sqrt() / sd - 1.0).abs() < 0.15,
            "coordinate {k}: {} vs {sd}",
            var.sqrt()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn marginals_are_probabilities(seed in any::<u64>(), len in 1usize..12, scale in 0.0f64..6.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (model, seq) = random_case(3, len, scale, &mut rng);
        let fb = forward_backward(&model, &seq).unwrap();
        for i in 0..len - 1 {
            prop_assert!(fb.xi[i] >= 0.0 && fb.xi[i] <= fb.q[i].min(fb.q[i + 1]) + 1e-12);
            prop_assert!(fb.xi[i] >= fb.q[i] + fb.q[i + 1] - 1.0 - 1e-12);
        }
        let c = case_covariance(&model, &seq).unwrap();
        prop_assert!(crate::math::min_eigenvalue(&c) > -1e-9);
    }

    #[test]
    fn flipping_all_weights_sign_mirrors_state_marginals(seed in any::<u64>(), len in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (model, seq) = random_case(2, len, 2.0, &mut rng);
        let (h, j) = model.fields(&seq).unwrap();
        // label flip t → 1 - t maps h_i → -h_i - J_{i-1} - J_i and keeps J
        let h2: Vec<f64> = (0..len)
            .map(|i| -h[i] - if i > 0 { j[i - 1] } else { 0.0 } - if i + 1 < len { j[i] } else { 0.0 })
            .collect();
        let a = marginals_from_fields(&h, &j);
        let b = marginals_from_fields(&h2, &j);
        for i in 0..len {
            prop_assert!((a.q[i] + b.q[i] - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn zero_weight_cases() {
    let seq = Sequence::from_rows(&[vec![1, 1]], None).unwrap();
    let model = ChainCrfModel::zeros(2);
    let fb = forward_backward(&model, &seq).unwrap();
    assert_eq!(fb.q, vec![0.5]);
    let c = case_covariance(&model, &seq).unwrap();
    assert!((c[(0, 0)] - 0.25).abs() < 1e-15 && (c[(1, 1)] - 0.25).abs() < 1e-15);
    let long = Sequence::from_rows(&vec![vec![1, 0]; 9], None).unwrap();
    let fb = forward_backward(&model, &long).unwrap();
    assert!((fb.log_z - 9.0 * core::f64::consts::LN_2).abs() < 1e-12);
    assert!(fb.q.iter().all(|q| (q - 0.5).abs() < 1e-12));
    assert!(fb.xi.iter().all(|x| (x - 0.25).abs() < 1e-12));
}

#[test]
fn strong_state_weight_labels_everything_one() {
    let seq = Sequence::from_rows(&vec![vec![1, 1]; 6], None).unwrap();
    let model = ChainCrfModel::new(2, vec![3.0, 2.0, -1.0, 0.0]).unwrap();
    assert_eq!(viterbi(&model, &seq).unwrap(), vec![1; 6]);
}

#[test]
fn probability_vote_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let len = rng.random_range(1..=6);
        let seq = random_features(2, len, 0.5, &mut rng).unwrap();
        let s = rng.random_range(1..=3);
        let models: Vec<ChainCrfModel> =
            (0..s).map(|_| random_case(2, 1, 2.0, &mut rng).0).collect();
        let mut avg = vec![0.0; len];
        for m in &models {
            let (all, p, _) = enumerate(m, &seq);
            for (t, w) in all.iter().zip(&p) {
                for i in 0..len {
                    avg[i] += w * f64::from(t[i]) / s as f64;
                }
            }
        }
        let expected: Vec<u8> = avg.iter().map(|&a| u8::from(a > 0.5)).collect();
        assert_eq!(
            vote(&models, &seq, VoteWeighting::Probability).unwrap(),
            expected
        );
    }
}

#[test]
fn identical_samples_reduce_to_viterbi() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (model, seq) = random_case(3, 7, 2.0, &mut rng);
    let v = viterbi(&model, &seq).unwrap();
    let copies = vec![model.clone(); 4];
    assert_eq!(vote(&copies, &seq, VoteWeighting::Majority).unwrap(), v);
    assert_eq!(
        vote(&copies, &seq, VoteWeighting::Probability)
            .unwrap()
            .len(),
        7
    );
    let d = supergraph_decode(
        &copies,
        &seq,
        DEFAULT_CONSTRAINT_PENALTY,
        &BpOptions::default(),
    )
    .unwrap();
    assert!(d.converged && d.agreement);
    assert_eq!(d.labels, v);
}

#[test]
fn converged_supergraph_decodes_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let truth = ChainCrfModel::new(2, vec![0.3, -0.4, 0.9, 0.2]).unwrap();
    let data = synthetic_corpus(&truth, 40, 8, 0.5, 24).unwrap();
    let prior = GaussianPrior::isotropic(1.0).unwrap();
    let fit = crf_fit_map(&data, &prior, &CrfFitOptions::default()).unwrap();
    let post = crf_posterior(&fit.weights, &data, &prior).unwrap();
    for k in 0..10 {
        let seq = random_features(2, 8, 0.5, &mut rng).unwrap();
        let d = supergraph_predict(&post, &seq, 5, k).unwrap();
        if d.converged {
            assert!(d.component_labels.iter().all(|c| *c == d.labels));
        }
    }
}

#[test]
fn fit_is_initialization_independent() {
    let truth = ChainCrfModel::new(2, vec![0.3, -0.4, 0.9, 0.2]).unwrap();
    let data = synthetic_corpus(&truth, 60, 8, 0.5, 25).unwrap();
    let prior = GaussianPrior::isotropic(4.0).unwrap();
    let a = crf_fit_map(&data, &prior, &CrfFitOptions::default()).unwrap();
    let b = crf_fit_map(
        &data,
        &prior,
        &CrfFitOptions {
            init: Some(vec![2.0, -3.0, 1.0, 4.0]),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(a.converged && b.converged);
    assert!(a
        .weights
        .iter()
        .zip(&b.weights)
        .all(|(x, y)| (x - y).abs() < 1e-4));
    assert!(a.grad_norm <= 1e-8);
}

#[test]
fn duplicated_corpus_halves_the_posterior_covariance() {
    let truth = ChainCrfModel::new(2, vec![0.3, -0.4, 0.9, 0.2]).unwrap();
    let data = synthetic_corpus(&truth, 200, 10, 0.5, 26).unwrap();
    let prior = GaussianPrior::isotropic(1e6).unwrap();
    let fit = crf_fit_map(&data, &prior, &CrfFitOptions::default()).unwrap();
    let single = crf_posterior(&fit.weights, &data, &prior).unwrap();
    let mut doubled: Vec<Sequence> = data.sequences().to_vec();
    doubled.extend_from_slice(data.sequences());
    let doubled = SequenceDataset::new(2, doubled).unwrap();
    let twice = crf_posterior(&fit.weights, &doubled, &prior).unwrap();
    let ratio = (&twice.covariance * 2.0 - &single.covariance).amax() / single.covariance.amax();
    assert!(ratio < 0.02, "{ratio}");
    assert!(crate::math::min_eigenvalue(&single.covariance) > 0.0);
}
