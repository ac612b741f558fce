//! Decoding: Viterbi, posterior voting, the constrained super-graph and the
//! corrected re-ranking objective.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::{case_covariance, expected_features, tied_features, ChainCrfModel, Sequence};
use crate::bp::{run_max_product, BpOptions, MaxProductResult};
use crate::graph::{build_graph, PairwiseBinaryModel};
use crate::posterior::{sample_posterior, GaussianPosterior};
use crate::{Error, Result};

/// Penalty `β` on disagreeing labels joined by a constraint edge.
pub const DEFAULT_CONSTRAINT_PENALTY: f64 = 50.0;

/// MAP labelling. Among optimal labellings the lexicographically smallest
/// is returned, i.e. ties go to 0, resolved left to right.
pub fn viterbi(model: &ChainCrfModel, seq: &Sequence) -> Result<Vec<u8>> {
    let (h, j) = model.fields(seq)?;
    let l = h.len();
    // best[i][t]: best score of lines i.. given t_i = t
    let mut best = vec![[0.0f64; 2]; l];
    best[l - 1] = [0.0, h[l - 1]];
    for i in (0..l - 1).rev() {
        let [n0, n1] = best[i + 1];
        best[i] = [n0.max(n1), h[i] + n0.max(j[i] + n1)];
    }
    let mut labels = Vec::with_capacity(l);
    let mut t = u8::from(best[0][1] > best[0][0]);
    labels.push(t);
    for i in 0..l - 1 {
        let [n0, n1] = best[i + 1];
        let one = if t == 1 { j[i] + n1 } else { n1 };
        t = u8::from(one > n0);
        labels.push(t);
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VoteWeighting {
    /// Each model casts its Viterbi labelling; ties go to 0.
    #[default]
    Majority,
    /// Average the per-line marginals and threshold at 1/2.
    Probability,
}

/// Combines several models' predictions line by line.
pub fn vote(models: &[ChainCrfModel], seq: &Sequence, weighting: VoteWeighting) -> Result<Vec<u8>> {
    if models.is_empty() {
        return Err(Error::InvalidArgument(
            "vote needs at least one model".into(),
        ));
    }
    let l = seq.len();
    let mut score = vec![0.0; l];
    for m in models {
        match weighting {
            VoteWeighting::Majority => {
                for (s, t) in score.iter_mut().zip(viterbi(m, seq)?) {
                    *s += f64::from(t);
                }
            }
            VoteWeighting::Probability => {
                for (s, q) in score.iter_mut().zip(super::forward_backward(m, seq)?.q) {
                    *s += q;
                }
            }
        }
    }
    let half = 0.5 * models.len() as f64;
    Ok(score.iter().map(|&s| u8::from(s > half)).collect())
}

/// `s` models drawn from the Gaussian posterior over CRF weights.
pub fn posterior_models(
    posterior: &GaussianPosterior,
    s: usize,
    seed: u64,
) -> Result<Vec<ChainCrfModel>> {
    if s == 0 {
        return Err(Error::InvalidArgument(
            "need at least one posterior sample".into(),
        ));
    }
    let dim = posterior.dim();
    if !dim.is_multiple_of(2) {
        return Err(Error::InvalidArgument(
            "CRF posterior dimension must be even".into(),
        ));
    }
    let samples = sample_posterior(posterior, s, seed)?;
    samples
        .rows()
        .map(|r| ChainCrfModel::new(dim / 2, r.to_vec()))
        .collect()
}

/// Votes over `s` posterior-sampled models.
pub fn predict_vote(
    posterior: &GaussianPosterior,
    seq: &Sequence,
    s: usize,
    seed: u64,
    weighting: VoteWeighting,
) -> Result<Vec<u8>> {
    vote(&posterior_models(posterior, s, seed)?, seq, weighting)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperGraphDecode {
    pub labels: Vec<u8>,
    /// Max-product converged.
    pub converged: bool,
    /// All component decodes are identical.
    pub agreement: bool,
    /// Decode of each copy of the chain.
    pub component_labels: Vec<Vec<u8>>,
}

impl SuperGraphDecode {
    pub fn is_flagged(&self) -> bool {
        !(self.converged && self.agreement)
    }
}

/// One chain per model over node `s·L + i`, with constraint edges between
/// line `i` of consecutive copies. The constraint `-β[a ≠ b]` equals a
/// coupling `2β` plus a field `-β` on each endpoint.
pub fn supergraph_model(
    models: &[ChainCrfModel],
    seq: &Sequence,
    beta: f64,
) -> Result<PairwiseBinaryModel> {
    if models.is_empty() {
        return Err(Error::InvalidArgument(
            "super-graph needs at least one model".into(),
        ));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(
            "constraint penalty must be finite and non-negative".into(),
        ));
    }
    let l = seq.len();
    let n = models.len() * l;
    let mut theta = vec![0.0; n];
    let mut couplings = Vec::new();
    for (s, m) in models.iter().enumerate() {
        let (h, j) = m.fields(seq)?;
        let base = s * l;
        for (t, v) in theta[base..base + l].iter_mut().zip(&h) {
            *t += v;
        }
        for (i, &w) in j.iter().enumerate() {
            couplings.push((base + i, base + i + 1, w));
        }
        if s + 1 < models.len() {
            for i in 0..l {
                couplings.push((base + i, base + l + i, 2.0 * beta));
                theta[base + i] -= beta;
                theta[base + l + i] -= beta;
            }
        }
    }
    let edges: Vec<(usize, usize)> = couplings.iter().map(|&(a, b, _)| (a, b)).collect();
    let graph = build_graph(n, &edges)?;
    let mut w = vec![0.0; graph.edge_count()];
    for &(a, b, v) in &couplings {
        let e = graph
            .edge_index(a, b)
            .ok_or(Error::NodeOutOfRange(a, b, n))?;
        w[e] = v;
    }
    PairwiseBinaryModel::new(graph, &theta, &w)
}

/// Max-product where tied max-marginals are resolved one node at a time, in
/// index order: the first tied node is clamped to 0 and messages are rerun.
fn decimated_max_product(
    model: &PairwiseBinaryModel,
    bp_options: &BpOptions,
) -> Result<MaxProductResult> {
    let scale = 1.0 + model.lambda().iter().map(|v| v.abs()).sum::<f64>();
    let tol = 1e-9 * scale;
    let mut lambda = model.lambda().to_vec();
    let mut clamped = vec![false; model.graph().node_count()];
    loop {
        let run = run_max_product(&model.with_lambda(&lambda), bp_options)?;
        let tie = (0..clamped.len()).find(|&i| !clamped[i] && run.log_odds[i].abs() <= tol);
        match tie {
            Some(i) if run.converged => {
                clamped[i] = true;
                lambda[i] -= 2.0 * scale;
            }
            _ => return Ok(run),
        }
    }
}

/// Max-product decode of the super-graph.
pub fn supergraph_decode(
    models: &[ChainCrfModel],
    seq: &Sequence,
    beta: f64,
    bp_options: &BpOptions,
) -> Result<SuperGraphDecode> {
    let model = supergraph_model(models, seq, beta)?;
    let run = decimated_max_product(&model, bp_options)?;
    let l = seq.len();
    let component_labels: Vec<Vec<u8>> = run.config.chunks(l).map(<[u8]>::to_vec).collect();
    let agreement = component_labels.windows(2).all(|w| w[0] == w[1]);
    Ok(SuperGraphDecode {
        labels: component_labels[0].clone(),
        converged: run.converged,
        agreement,
        component_labels,
    })
}

/// Super-graph decode over `s` posterior-sampled models with the default penalty.
pub fn supergraph_predict(
    posterior: &GaussianPosterior,
    seq: &Sequence,
    s: usize,
    seed: u64,
) -> Result<SuperGraphDecode> {
    let models = posterior_models(posterior, s, seed)?;
    supergraph_decode(
        &models,
        seq,
        DEFAULT_CONSTRAINT_PENALTY,
        &BpOptions::default(),
    )
}

fn map_model(posterior: &GaussianPosterior) -> Result<ChainCrfModel> {
    let dim = posterior.dim();
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::InvalidArgument(
            "CRF posterior dimension must be even".into(),
        ));
    }
    ChainCrfModel::new(dim / 2, posterior.mean.clone())
}

/// `½ mᵀ (C_x + Σ⁻¹)⁻¹ m` with `m = f(t, x) - E[f | x]` at the posterior mean.
pub fn correction_term(
    posterior: &GaussianPosterior,
    seq: &Sequence,
    labels: &[u8],
) -> Result<f64> {
    let model = map_model(posterior)?;
    let f = tied_features(seq, labels)?;
    let kappa = expected_features(&model, seq)?;
    let m = DVector::from_iterator(f.len(), f.iter().zip(&kappa).map(|(a, b)| a - b));
    let mut a: DMatrix<f64> = case_covariance(&model, seq)? + &posterior.precision;
    crate::math::symmetrize(&mut a);
    let solved = match a.clone().cholesky() {
        Some(ch) => ch.solve(&m),
        None => a.lu().solve(&m).ok_or(Error::Singular(f64::INFINITY))?,
    };
    Ok(0.5 * m.dot(&solved))
}

/// `G(t) = λ^MPᵀ f(t, x) + ½ mᵀ (C_x + Σ⁻¹)⁻¹ m`.
pub fn corrected_objective(
    posterior: &GaussianPosterior,
    seq: &Sequence,
    labels: &[u8],
) -> Result<f64> {
    let model = map_model(posterior)?;
    Ok(model.score(seq, labels)? + correction_term(posterior, seq, labels)?)
}

/// Index of the candidate labelling with the largest corrected objective;
/// ties go to the earliest.
pub fn rerank(
    posterior: &GaussianPosterior,
    seq: &Sequence,
    candidates: &[Vec<u8>],
) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, c) in candidates.iter().enumerate() {
        let g = corrected_objective(posterior, seq, c)?;
        if best.is_none_or(|(_, b)| g > b) {
            best = Some((k, g));
        }
    }
    best.map(|(k, _)| k)
        .ok_or_else(|| Error::InvalidArgument("no candidates to rank".into()))
}
