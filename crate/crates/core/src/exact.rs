//! Exact inference oracles.
//!
//! Brute-force enumeration covers tiny models of any topology. Grids use a
//! transfer over slices of the lattice: each slice (a column or a row, the
//! shorter side) is treated as one super-variable with `2^width` states, which
//! turns the grid into a chain that forward–backward handles exactly.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Dataset, Graph, GridShape, PairwiseBinaryModel};
use crate::math::log_sum_exp;
use crate::{Error, Result};

/// Node limit for enumerating `log Z` and feature means.
pub const BRUTE_LOG_Z_LIMIT: usize = 20;
/// Node limit for enumerating the full feature covariance.
pub const BRUTE_MOMENTS_LIMIT: usize = 16;
/// Largest slice width accepted by the grid transfer (`2^width` states).
pub const GRID_WIDTH_LIMIT: usize = 12;

/// Exact feature mean and covariance under `p(x | λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactMoments {
    pub log_z: f64,
    pub kappa: Vec<f64>,
    pub covariance: DMatrix<f64>,
}

fn check_brute(model: &PairwiseBinaryModel, limit: usize) -> Result<usize> {
    let n = model.graph().node_count();
    if n > limit {
        return Err(Error::TooLarge {
            what: "node count",
            size: n,
            limit,
        });
    }
    Ok(n)
}

#[inline]
fn state_config(s: usize, n: usize, buf: &mut [u8]) {
    for (i, b) in buf.iter_mut().enumerate().take(n) {
        *b = ((s >> i) & 1) as u8;
    }
}

fn all_scores(model: &PairwiseBinaryModel, n: usize) -> Vec<f64> {
    let mut x = vec![0u8; n];
    (0..1usize << n)
        .map(|s| {
            state_config(s, n, &mut x);
            model.score_unchecked(&x)
        })
        .collect()
}

/// `log Σ_x exp(λᵀ f(x))` by enumeration.
pub fn brute_log_z(model: &PairwiseBinaryModel) -> Result<f64> {
    let n = check_brute(model, BRUTE_LOG_Z_LIMIT)?;
    Ok(log_sum_exp(&all_scores(model, n)))
}

/// `log Z` and `κ = E[f]` by enumeration.
pub fn brute_log_z_and_kappa(model: &PairwiseBinaryModel) -> Result<(f64, Vec<f64>)> {
    let n = check_brute(model, BRUTE_LOG_Z_LIMIT)?;
    let graph = model.graph();
    let scores = all_scores(model, n);
    let log_z = log_sum_exp(&scores);
    let mut kappa = vec![0.0; graph.feature_count()];
    for (s, &score) in scores.iter().enumerate() {
        let p = (score - log_z).exp();
        for (i, k) in kappa.iter_mut().enumerate().take(n) {
            if (s >> i) & 1 == 1 {
                *k += p;
            }
        }
        for (e, &(i, j)) in graph.edges().iter().enumerate() {
            if (s >> i) & (s >> j) & 1 == 1 {
                kappa[n + e] += p;
            }
        }
    }
    Ok((log_z, kappa))
}

/// Exact `κ` and `C = E[ffᵀ] - κκᵀ` by enumeration.
pub fn brute_moments(model: &PairwiseBinaryModel) -> Result<ExactMoments> {
    let n = check_brute(model, BRUTE_MOMENTS_LIMIT)?;
    let graph = model.graph();
    let f_dim = graph.feature_count();
    let scores = all_scores(model, n);
    let log_z = log_sum_exp(&scores);
    let mut kappa = vec![0.0; f_dim];
    let mut second = DMatrix::<f64>::zeros(f_dim, f_dim);
    let mut active = Vec::with_capacity(f_dim);
    for (s, &score) in scores.iter().enumerate() {
        let p = (score - log_z).exp();
        active.clear();
        active.extend((0..n).filter(|&i| (s >> i) & 1 == 1));
        for (e, &(i, j)) in graph.edges().iter().enumerate() {
            if (s >> i) & (s >> j) & 1 == 1 {
                active.push(n + e);
            }
        }
        for &a in &active {
            kappa[a] += p;
            for &b in &active {
                second[(a, b)] += p;
            }
        }
    }
    let mut covariance = second;
    for a in 0..f_dim {
        for b in 0..f_dim {
            covariance[(a, b)] -= kappa[a] * kappa[b];
        }
    }
    crate::math::symmetrize(&mut covariance);
    Ok(ExactMoments {
        log_z,
        kappa,
        covariance,
    })
}

/// Exact `log Z`, node marginals `q_i = p(x_i = 1)` and edge marginals
/// `ξ_ij = p(x_i = 1, x_j = 1)` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMarginals {
    pub log_z: f64,
    pub q: Vec<f64>,
    pub xi: Vec<f64>,
}

impl GridMarginals {
    /// `concat(q, ξ)`, the exact feature mean.
    pub fn kappa(&self) -> Vec<f64> {
        let mut k = self.q.clone();
        k.extend_from_slice(&self.xi);
        k
    }
}

/// Slices of a grid and the edges inside and between them.
struct SliceLayout {
    width: usize,
    length: usize,
    /// `nodes[t][k]`: node at position `k` of slice `t`.
    nodes: Vec<Vec<usize>>,
    /// Per slice: `(k, edge)` for the edge between positions `k` and `k + 1`.
    intra: Vec<Vec<(usize, usize)>>,
    /// Per slice boundary `t | t+1`: `(k, edge)` linking the two slices at `k`.
    inter: Vec<Vec<(usize, usize)>>,
}

impl SliceLayout {
    fn new(graph: &Graph) -> Result<Self> {
        let GridShape { rows, cols } = graph.grid_shape().ok_or(Error::NotAGrid)?;
        let by_columns = rows <= cols;
        let (width, length) = if by_columns {
            (rows, cols)
        } else {
            (cols, rows)
        };
        if width > GRID_WIDTH_LIMIT {
            return Err(Error::TooLarge {
                what: "grid slice width",
                size: width,
                limit: GRID_WIDTH_LIMIT,
            });
        }
        let node = |t: usize, k: usize| {
            if by_columns {
                k * cols + t
            } else {
                t * cols + k
            }
        };
        let nodes: Vec<Vec<usize>> = (0..length)
            .map(|t| (0..width).map(|k| node(t, k)).collect())
            .collect();
        let edge = |a: usize, b: usize| graph.edge_index(a, b).ok_or(Error::NotAGrid);
        let mut intra = Vec::with_capacity(length);
        let mut inter = Vec::with_capacity(length.saturating_sub(1));
        for t in 0..length {
            let mut v = Vec::with_capacity(width.saturating_sub(1));
            for k in 0..width.saturating_sub(1) {
                v.push((k, edge(node(t, k), node(t, k + 1))?));
            }
            intra.push(v);
            if t + 1 < length {
                let mut v = Vec::with_capacity(width);
                for k in 0..width {
                    v.push((k, edge(node(t, k), node(t + 1, k))?));
                }
                inter.push(v);
            }
        }
        Ok(SliceLayout {
            width,
            length,
            nodes,
            intra,
            inter,
        })
    }
}

/// Forward messages over the slices of a grid model.
struct GridChain<'m> {
    model: &'m PairwiseBinaryModel,
    layout: SliceLayout,
    /// `log φ_t(a)` for every slice state.
    local: Vec<Vec<f64>>,
    /// `exp(Σ_{k ∈ mask} w_k)` for each boundary.
    coupling: Vec<Vec<f64>>,
    /// `α_t(a)`, log domain, including `local[t]`.
    alpha: Vec<Vec<f64>>,
}

impl<'m> GridChain<'m> {
    fn new(model: &'m PairwiseBinaryModel) -> Result<Self> {
        let layout = SliceLayout::new(model.graph())?;
        let states = 1usize << layout.width;
        let theta = model.theta();
        let w = model.w();
        let local: Vec<Vec<f64>> = (0..layout.length)
            .map(|t| {
                (0..states)
                    .map(|a| {
                        let mut s = 0.0;
                        for k in 0..layout.width {
                            if (a >> k) & 1 == 1 {
                                s += theta[layout.nodes[t][k]];
                            }
                        }
                        for &(k, e) in &layout.intra[t] {
                            if (a >> k) & (a >> (k + 1)) & 1 == 1 {
                                s += w[e];
                            }
                        }
                        s
                    })
                    .collect()
            })
            .collect();
        let coupling: Vec<Vec<f64>> = layout
            .inter
            .iter()
            .map(|links| {
                (0..states)
                    .map(|mask| {
                        let s: f64 = links
                            .iter()
                            .filter(|(k, _)| (mask >> k) & 1 == 1)
                            .map(|&(_, e)| w[e])
                            .sum();
                        s.exp()
                    })
                    .collect()
            })
            .collect();
        let mut chain = GridChain {
            model,
            layout,
            local,
            coupling,
            alpha: Vec::new(),
        };
        chain.forward();
        Ok(chain)
    }

    fn states(&self) -> usize {
        1usize << self.layout.width
    }

    /// `out(b) = log Σ_a exp(msg(a)) ψ_t(a, b)`.
    fn propagate(&self, t: usize, msg: &[f64], out: &mut [f64]) {
        let m = msg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = msg.iter().map(|&v| (v - m).exp()).collect();
        let coupling = &self.coupling[t];
        for (b, o) in out.iter_mut().enumerate() {
            let s: f64 = scaled
                .iter()
                .enumerate()
                .map(|(a, &v)| v * coupling[a & b])
                .sum();
            *o = m + s.ln();
        }
    }

    fn forward(&mut self) {
        let states = self.states();
        let mut alpha = Vec::with_capacity(self.layout.length);
        alpha.push(self.local[0].clone());
        for t in 0..self.layout.length - 1 {
            let mut next = vec![0.0; states];
            self.propagate(t, &alpha[t], &mut next);
            for (n, l) in next.iter_mut().zip(&self.local[t + 1]) {
                *n += l;
            }
            alpha.push(next);
        }
        self.alpha = alpha;
    }

    fn log_z(&self) -> f64 {
        log_sum_exp(&self.alpha[self.layout.length - 1])
    }

    fn backward(&self) -> Vec<Vec<f64>> {
        let states = self.states();
        let len = self.layout.length;
        let mut beta = vec![vec![0.0; states]; len];
        for t in (0..len - 1).rev() {
            let msg: Vec<f64> = self.local[t + 1]
                .iter()
                .zip(&beta[t + 1])
                .map(|(l, b)| l + b)
                .collect();
            // ψ is symmetric in (a, b), so the forward kernel serves both directions.
            let mut out = vec![0.0; states];
            self.propagate(t, &msg, &mut out);
            beta[t] = out;
        }
        beta
    }

    fn marginals(&self) -> GridMarginals {
        let graph = self.model.graph();
        let layout = &self.layout;
        let states = self.states();
        let w = self.model.w();
        let log_z = self.log_z();
        let beta = self.backward();
        let mut q = vec![0.0; graph.node_count()];
        let mut xi = vec![0.0; graph.edge_count()];
        for t in 0..layout.length {
            for a in 0..states {
                let p = (self.alpha[t][a] + beta[t][a] - log_z).exp();
                for k in 0..layout.width {
                    if (a >> k) & 1 == 1 {
                        q[layout.nodes[t][k]] += p;
                    }
                }
                for &(k, e) in &layout.intra[t] {
                    if (a >> k) & (a >> (k + 1)) & 1 == 1 {
                        xi[e] += p;
                    }
                }
            }
            if t + 1 < layout.length {
                let links = &layout.inter[t];
                for a in 0..states {
                    let left = self.alpha[t][a] - log_z;
                    for b in 0..states {
                        let both = a & b;
                        if both == 0 {
                            continue;
                        }
                        let pair: f64 = links
                            .iter()
                            .filter(|(k, _)| (both >> k) & 1 == 1)
                            .map(|&(_, e)| w[e])
                            .sum();
                        let p = (left + pair + self.local[t + 1][b] + beta[t + 1][b]).exp();
                        for &(k, e) in links {
                            if (both >> k) & 1 == 1 {
                                xi[e] += p;
                            }
                        }
                    }
                }
            }
        }
        GridMarginals { log_z, q, xi }
    }

    fn sample_index<R: Rng>(logits: &[f64], rng: &mut R) -> usize {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (i, &wt) in weights.iter().enumerate() {
            if u < wt {
                return i;
            }
            u -= wt;
        }
        weights.iter().rposition(|&wt| wt > 0.0).unwrap_or(0)
    }

    /// Backward sampling from the forward filter.
    fn sample_into<R: Rng>(&self, rng: &mut R, out: &mut [u8]) {
        let layout = &self.layout;
        let len = layout.length;
        let states = self.states();
        let mut b = Self::sample_index(&self.alpha[len - 1], rng);
        let write = |out: &mut [u8], t: usize, s: usize| {
            for k in 0..layout.width {
                out[layout.nodes[t][k]] = ((s >> k) & 1) as u8;
            }
        };
        write(out, len - 1, b);
        let mut logits = vec![0.0; states];
        for t in (0..len - 1).rev() {
            let coupling = &self.coupling[t];
            for (a, l) in logits.iter_mut().enumerate() {
                *l = self.alpha[t][a] + coupling[a & b].ln();
            }
            b = Self::sample_index(&logits, rng);
            write(out, t, b);
        }
    }
}

/// Exact marginals and `log Z` on a model whose graph came from `grid_graph`.
pub fn grid_log_z_and_marginals(model: &PairwiseBinaryModel) -> Result<GridMarginals> {
    Ok(GridChain::new(model)?.marginals())
}

/// `n_samples` independent exact draws by forward filtering over slices and
/// backward sampling. Deterministic for a given seed.
pub fn perfect_sample(model: &PairwiseBinaryModel, n_samples: usize, seed: u64) -> Result<Dataset> {
    let chain = GridChain::new(model)?;
    let n = model.graph().node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits = vec![0u8; n * n_samples];
    for row in bits.chunks_exact_mut(n) {
        chain.sample_into(&mut rng, row);
    }
    Dataset::from_flat(n, bits)
}

/// Independent exact draws by inverting the enumerated CDF. Deterministic for
/// a given seed.
pub fn brute_sample(model: &PairwiseBinaryModel, n_samples: usize, seed: u64) -> Result<Dataset> {
    let n = check_brute(model, BRUTE_LOG_Z_LIMIT)?;
    let scores = all_scores(model, n);
    let log_z = log_sum_exp(&scores);
    let mut cdf = Vec::with_capacity(scores.len());
    let mut acc = 0.0;
    for s in &scores {
        acc += (s - log_z).exp();
        cdf.push(acc);
    }
    let total = acc;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits = vec![0u8; n * n_samples];
    for row in bits.chunks_exact_mut(n) {
        let u = rng.random::<f64>() * total;
        let s = cdf.partition_point(|&c| c <= u).min(scores.len() - 1);
        state_config(s, n, row);
    }
    Dataset::from_flat(n, bits)
}

/// Exact draws by whichever route applies, as in [`log_z_and_kappa`].
pub fn exact_sample(model: &PairwiseBinaryModel, n_samples: usize, seed: u64) -> Result<Dataset> {
    match model.graph().grid_shape() {
        Some(GridShape { rows, cols }) if rows.min(cols) <= GRID_WIDTH_LIMIT => {
            perfect_sample(model, n_samples, seed)
        }
        _ => brute_sample(model, n_samples, seed),
    }
}

/// `log Z` and `κ` from whichever exact route applies: the grid transfer for
/// grids within the width bound, otherwise enumeration.
pub fn log_z_and_kappa(model: &PairwiseBinaryModel) -> Result<(f64, Vec<f64>)> {
    match model.graph().grid_shape() {
        Some(GridShape { rows, cols }) if rows.min(cols) <= GRID_WIDTH_LIMIT => {
            let m = grid_log_z_and_marginals(model)?;
            let kappa = m.kappa();
            Ok((m.log_z, kappa))
        }
        _ => brute_log_z_and_kappa(model),
    }
}

/// True when [`log_z_and_kappa`] can handle the graph.
pub fn has_exact_backend(graph: &Graph) -> bool {
    match graph.grid_shape() {
        Some(GridShape { rows, cols }) if rows.min(cols) <= GRID_WIDTH_LIMIT => true,
        _ => graph.node_count() <= BRUTE_LOG_Z_LIMIT,
    }
}

/// `log Z` via [`log_z_and_kappa`]'s routing, skipping the marginals.
pub fn log_z(model: &PairwiseBinaryModel) -> Result<f64> {
    match model.graph().grid_shape() {
        Some(GridShape { rows, cols }) if rows.min(cols) <= GRID_WIDTH_LIMIT => {
            Ok(GridChain::new(model)?.log_z())
        }
        _ => brute_log_z(model),
    }
}
