//! Linear-chain conditional random field over binary labels `t_i`, with
//! weights tied across positions.
//!
//! Each line `i` of a sequence carries binary features `g^a(x_i)`, `a < A`.
//! The `2A` tied features are
//!
//! ```text
//! state a:       Σ_i        t_i         g^a(x_i)
//! transition a:  Σ_{i<L-1}  t_i t_{i+1} g^a(x_i)
//! ```
//!
//! so a labelling scores `Σ_i h_i t_i + Σ_i J_i t_i t_{i+1}` with
//! `h_i = Σ_a w_a g^a(x_i)` and `J_i = Σ_a w_{A+a} g^a(x_i)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::math::log_add_exp;
use crate::response::aggregate;
use crate::{Error, Result};

mod bayes;
mod predict;

pub use bayes::{
    crf_fit_map, crf_langevin_cd, crf_mh_exact, crf_objective, crf_posterior, mean_case_covariance,
    random_features, sample_labels, synthetic_corpus, CrfCdGradient, CrfExactPosterior,
    CrfFitOptions, CrfFitResult,
};
pub use predict::{
    corrected_objective, correction_term, posterior_models, predict_vote, rerank,
    supergraph_decode, supergraph_model, supergraph_predict, viterbi, vote, SuperGraphDecode,
    VoteWeighting, DEFAULT_CONSTRAINT_PENALTY,
};

/// Longest sequence kept at ingestion.
pub const DEFAULT_MAX_LENGTH: usize = 100;

/// Feature rows of one sequence and, for training data, its labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    width: usize,
    features: Vec<u8>,
    labels: Option<Vec<u8>>,
}

fn check_binary(values: &[u8], what: &str) -> Result<()> {
    match values.iter().position(|&v| v > 1) {
        Some(index) => Err(Error::InvalidArgument(format!(
            "{what} entry {index} is {}, expected 0 or 1",
            values[index]
        ))),
        None => Ok(()),
    }
}

impl Sequence {
    /// `features` is `L × width`, row-major.
    pub fn new(width: usize, features: Vec<u8>, labels: Option<Vec<u8>>) -> Result<Self> {
        if width == 0 || features.is_empty() || !features.len().is_multiple_of(width) {
            return Err(Error::LengthMismatch {
                what: "sequence features",
                expected: width,
                actual: features.len(),
            });
        }
        check_binary(&features, "feature")?;
        let len = features.len() / width;
        if let Some(t) = &labels {
            if t.len() != len {
                return Err(Error::LengthMismatch {
                    what: "labels",
                    expected: len,
                    actual: t.len(),
                });
            }
            check_binary(t, "label")?;
        }
        Ok(Sequence {
            width,
            features,
            labels,
        })
    }

    pub fn from_rows(rows: &[Vec<u8>], labels: Option<Vec<u8>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidArgument(
                "feature rows differ in width".into(),
            ));
        }
        Self::new(width, rows.concat(), labels)
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Features of line `i`.
    pub fn g(&self, i: usize) -> &[u8] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn with_labels(&self, labels: Option<Vec<u8>>) -> Result<Self> {
        Self::new(self.width, self.features.clone(), labels)
    }

    /// The first `max_len` lines.
    pub fn truncated(&self, max_len: usize) -> Sequence {
        let l = self.len().min(max_len.max(1));
        Sequence {
            width: self.width,
            features: self.features[..l * self.width].to_vec(),
            labels: self.labels.as_ref().map(|t| t[..l].to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceDataset {
    width: usize,
    sequences: Vec<Sequence>,
}

impl SequenceDataset {
    pub fn new(width: usize, sequences: Vec<Sequence>) -> Result<Self> {
        if let Some(s) = sequences.iter().find(|s| s.width() != width) {
            return Err(Error::LengthMismatch {
                what: "feature width",
                expected: width,
                actual: s.width(),
            });
        }
        Ok(SequenceDataset { width, sequences })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Sequence> {
        self.sequences.iter()
    }

    /// The first `n` sequences.
    pub fn first(&self, n: usize) -> SequenceDataset {
        SequenceDataset {
            width: self.width,
            sequences: self.sequences[..n.min(self.len())].to_vec(),
        }
    }

    pub fn is_labelled(&self) -> bool {
        self.sequences.iter().all(|s| s.labels().is_some())
    }
}

/// Tied weights: `A` state weights followed by `A` transition weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainCrfModel {
    width: usize,
    weights: Vec<f64>,
}

impl ChainCrfModel {
    pub fn new(width: usize, weights: Vec<f64>) -> Result<Self> {
        if width == 0 || weights.len() != 2 * width {
            return Err(Error::LengthMismatch {
                what: "CRF weights",
                expected: 2 * width,
                actual: weights.len(),
            });
        }
        Ok(ChainCrfModel { width, weights })
    }

    pub fn zeros(width: usize) -> Self {
        ChainCrfModel {
            width,
            weights: vec![0.0; 2 * width],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn state_weights(&self) -> &[f64] {
        &self.weights[..self.width]
    }

    pub fn transition_weights(&self) -> &[f64] {
        &self.weights[self.width..]
    }

    fn check(&self, seq: &Sequence) -> Result<()> {
        if seq.width() != self.width {
            return Err(Error::LengthMismatch {
                what: "feature width",
                expected: self.width,
                actual: seq.width(),
            });
        }
        Ok(())
    }

    /// Node fields `h` (length `L`) and couplings `J` (length `L - 1`).
    pub fn fields(&self, seq: &Sequence) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(seq)?;
        let project = |w: &[f64], g: &[u8]| -> f64 {
            w.iter()
                .zip(g)
                .filter(|(_, &b)| b == 1)
                .map(|(w, _)| w)
                .sum()
        };
        let l = seq.len();
        let h = (0..l)
            .map(|i| project(self.state_weights(), seq.g(i)))
            .collect();
        let j = (0..l - 1)
            .map(|i| project(self.transition_weights(), seq.g(i)))
            .collect();
        Ok((h, j))
    }

    /// `λᵀf(t, x)`.
    pub fn score(&self, seq: &Sequence, labels: &[u8]) -> Result<f64> {
        let f = tied_features(seq, labels)?;
        self.check(seq)?;
        Ok(crate::math::dot(&self.weights, &f))
    }
}

/// The `2A` tied features of a labelling.
pub fn tied_features(seq: &Sequence, labels: &[u8]) -> Result<Vec<f64>> {
    let l = seq.len();
    if labels.len() != l {
        return Err(Error::LengthMismatch {
            what: "labels",
            expected: l,
            actual: labels.len(),
        });
    }
    let a = seq.width();
    let mut f = vec![0.0; 2 * a];
    for i in 0..l {
        let g = seq.g(i);
        let on = labels[i] == 1;
        let pair = on && i + 1 < l && labels[i + 1] == 1;
        for k in 0..a {
            if g[k] == 1 {
                if on {
                    f[k] += 1.0;
                }
                if pair {
                    f[a + k] += 1.0;
                }
            }
        }
    }
    Ok(f)
}

/// Maps the label statistics `(t_0..t_{L-1}, t_0 t_1..t_{L-2} t_{L-1})` to
/// the tied features: `2A × (2L - 1)`.
pub fn tying_matrix_for(seq: &Sequence) -> DMatrix<f64> {
    let (a, l) = (seq.width(), seq.len());
    let mut m = DMatrix::zeros(2 * a, 2 * l - 1);
    for i in 0..l {
        for (k, &g) in seq.g(i).iter().enumerate() {
            if g == 1 {
                m[(k, i)] = 1.0;
                if i + 1 < l {
                    m[(a + k, l + i)] = 1.0;
                }
            }
        }
    }
    m
}

/// Exact node marginals `q_i = p(t_i = 1 | x)`, pair marginals
/// `ξ_i = p(t_i = 1, t_{i+1} = 1 | x)` and `log Z(λ, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainMarginals {
    pub q: Vec<f64>,
    pub xi: Vec<f64>,
    pub log_z: f64,
}

impl ChainMarginals {
    /// Means of the label statistics, `[q; ξ]`.
    pub fn statistics(&self) -> Vec<f64> {
        let mut s = self.q.clone();
        s.extend_from_slice(&self.xi);
        s
    }
}

/// Forward messages `α_i(t)`: log-sum over prefixes ending in `t_i = t`.
fn forward(h: &[f64], j: &[f64]) -> Vec<[f64; 2]> {
    let mut alpha = Vec::with_capacity(h.len());
    alpha.push([0.0, h[0]]);
    for i in 1..h.len() {
        let [a0, a1] = alpha[i - 1];
        let to0 = log_add_exp(a0, a1);
        let to1 = log_add_exp(a0, a1 + j[i - 1]) + h[i];
        alpha.push([to0, to1]);
    }
    alpha
}

fn backward(h: &[f64], j: &[f64]) -> Vec<[f64; 2]> {
    let l = h.len();
    let mut beta = vec![[0.0, 0.0]; l];
    for i in (0..l - 1).rev() {
        let [b0, b1] = beta[i + 1];
        let next0 = b0;
        let next1 = b1 + h[i + 1];
        beta[i] = [log_add_exp(next0, next1), log_add_exp(next0, next1 + j[i])];
    }
    beta
}

pub fn forward_backward(model: &ChainCrfModel, seq: &Sequence) -> Result<ChainMarginals> {
    let (h, j) = model.fields(seq)?;
    Ok(marginals_from_fields(&h, &j))
}

pub(crate) fn marginals_from_fields(h: &[f64], j: &[f64]) -> ChainMarginals {
    let l = h.len();
    let alpha = forward(h, j);
    let beta = backward(h, j);
    let log_z = log_add_exp(alpha[l - 1][0], alpha[l - 1][1]);
    let q = (0..l)
        .map(|i| (alpha[i][1] + beta[i][1] - log_z).exp())
        .collect();
    let xi = (0..l - 1)
        .map(|i| (alpha[i][1] + j[i] + h[i + 1] + beta[i + 1][1] - log_z).exp())
        .collect();
    ChainMarginals { q, xi, log_z }
}

/// `log p(t | x, λ)` for a labelled sequence.
pub fn conditional_log_likelihood(model: &ChainCrfModel, seq: &Sequence) -> Result<f64> {
    let labels = seq
        .labels()
        .ok_or_else(|| Error::InvalidArgument("sequence has no labels".into()))?;
    let m = forward_backward(model, seq)?;
    Ok(model.score(seq, labels)? - m.log_z)
}

/// `E[f(t, x) | x]` in tied coordinates.
pub fn expected_features(model: &ChainCrfModel, seq: &Sequence) -> Result<Vec<f64>> {
    let m = forward_backward(model, seq)?;
    Ok(tied_from_statistics(seq, &m.statistics()))
}

fn tied_from_statistics(seq: &Sequence, stats: &[f64]) -> Vec<f64> {
    let (a, l) = (seq.width(), seq.len());
    let mut f = vec![0.0; 2 * a];
    for i in 0..l {
        for (k, &g) in seq.g(i).iter().enumerate() {
            if g == 1 {
                f[k] += stats[i];
                if i + 1 < l {
                    f[a + k] += stats[l + i];
                }
            }
        }
    }
    f
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Exact covariance of the untied label statistics `(t_i, t_i t_{i+1})`,
/// `(2L - 1) × (2L - 1)`, and their means.
///
/// The posterior over labels is a Markov chain, so every second moment
/// factors through the forward conditionals `P(t_k = 1 | t_s = 1)`.
pub fn label_statistics_covariance(
    model: &ChainCrfModel,
    seq: &Sequence,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let m = forward_backward(model, seq)?;
    let l = seq.len();
    let (q, xi) = (&m.q, &m.xi);
    // P(t_{k+1} = 1 | t_k = 1) and P(t_{k+1} = 1 | t_k = 0)
    let up: Vec<f64> = (0..l - 1).map(|k| ratio(xi[k], q[k])).collect();
    let stay: Vec<f64> = (0..l - 1)
        .map(|k| ratio(q[k + 1] - xi[k], 1.0 - q[k]))
        .collect();
    // r[s][k - s] = P(t_k = 1 | t_s = 1), k ≥ s
    let r: Vec<Vec<f64>> = (0..l)
        .map(|s| {
            let mut row = Vec::with_capacity(l - s);
            row.push(1.0);
            for k in s..l - 1 {
                let p = row[k - s];
                row.push(p * up[k] + (1.0 - p) * stay[k]);
            }
            row
        })
        .collect();
    let cond = |s: usize, k: usize| r[s][k - s];
    let d = 2 * l - 1;
    let mut second = DMatrix::zeros(d, d);
    for i in 0..l {
        for jdx in i..l {
            let v = q[i] * cond(i, jdx);
            second[(i, jdx)] = v;
            second[(jdx, i)] = v;
        }
        for jdx in 0..l - 1 {
            let v = if jdx >= i {
                q[i] * cond(i, jdx) * up[jdx]
            } else {
                xi[jdx] * cond(jdx + 1, i)
            };
            second[(i, l + jdx)] = v;
            second[(l + jdx, i)] = v;
        }
    }
    for i in 0..l - 1 {
        second[(l + i, l + i)] = xi[i];
        for jdx in i + 1..l - 1 {
            let v = xi[i] * cond(i + 1, jdx) * up[jdx];
            second[(l + i, l + jdx)] = v;
            second[(l + jdx, l + i)] = v;
        }
    }
    let mean = m.statistics();
    let mu = nalgebra::DVector::from_column_slice(&mean);
    let mut cov = second - &mu * mu.transpose();
    crate::math::symmetrize(&mut cov);
    Ok((cov, mean))
}

/// Covariance of the tied features under `p(t | x, λ)`, `2A × 2A`.
pub fn case_covariance(model: &ChainCrfModel, seq: &Sequence) -> Result<DMatrix<f64>> {
    let (c, _) = label_statistics_covariance(model, seq)?;
    aggregate(&c, &tying_matrix_for(seq))
}

#[cfg(test)]
mod tests;
