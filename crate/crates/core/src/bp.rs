//! Loopy belief propagation on pairwise binary models.
//!
//! Messages are kept as log-ratios `μ_{i→j} = log m_{i→j}(1) - log m_{i→j}(0)`,
//! one per directed edge (`2e` is `i→j`, `2e+1` is `j→i` for edge `e = (i, j)`).
//! Damping mixes old and new log-ratios.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, PairwiseBinaryModel};
use crate::math::{sigmoid, softplus};
use crate::{Error, Result};

/// Minimum probability kept in every cell of an edge belief.
pub const BELIEF_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Every message is recomputed from the previous sweep.
    Synchronous,
    /// Messages are updated in place, edge by edge in canonical order.
    Sequential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpOptions {
    pub max_iters: usize,
    /// Convergence threshold on the max-norm change of the log-ratio messages.
    pub tol: f64,
    /// Weight on the previous message, in `[0, 1)`.
    pub damping: f64,
    pub schedule: Schedule,
    /// Random initial messages instead of uniform ones.
    pub init_seed: Option<u64>,
}

impl Default for BpOptions {
    fn default() -> Self {
        BpOptions {
            max_iters: 2000,
            tol: 1e-10,
            damping: 0.5,
            schedule: Schedule::Sequential,
            init_seed: None,
        }
    }
}

impl BpOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 || !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidArgument(format!(
                "invalid BP options: max_iters {}, tol {}, damping {}",
                self.max_iters, self.tol, self.damping
            )));
        }
        Ok(())
    }
}

/// Node beliefs `q_i = b(x_i = 1)` and edge beliefs `ξ_ij = b(x_i = 1, x_j = 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Beliefs {
    pub q: Vec<f64>,
    pub xi: Vec<f64>,
}

/// The four cells `(p11, p10, p01, p00)` of an edge belief.
#[inline]
pub(crate) fn cells(qi: f64, qj: f64, xi: f64) -> [f64; 4] {
    [xi, qi - xi, qj - xi, 1.0 - qi - qj + xi]
}

/// Moves `(q_i, q_j, ξ)` inside the Fréchet bounds with `floor` margin on every cell.
pub(crate) fn clamp_interior(q: &mut [f64], xi: &mut [f64], graph: &Graph, floor: f64) {
    for v in q.iter_mut() {
        *v = v.clamp(2.0 * floor, 1.0 - 2.0 * floor);
    }
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        let lo = (q[i] + q[j] - 1.0).max(0.0) + floor;
        let hi = q[i].min(q[j]) - floor;
        xi[e] = if lo <= hi {
            xi[e].clamp(lo, hi)
        } else {
            0.5 * (lo + hi)
        };
    }
}

impl Beliefs {
    /// Checks lengths and that every node and edge cell is strictly positive.
    pub fn validate(&self, graph: &Graph) -> Result<()> {
        if self.q.len() != graph.node_count() || self.xi.len() != graph.edge_count() {
            return Err(Error::LengthMismatch {
                what: "beliefs",
                expected: graph.feature_count(),
                actual: self.q.len() + self.xi.len(),
            });
        }
        for (i, &q) in self.q.iter().enumerate() {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::BoundaryBeliefs(format!("node {i} (q = {q})")));
            }
        }
        for (e, &(i, j)) in graph.edges().iter().enumerate() {
            let c = cells(self.q[i], self.q[j], self.xi[e]);
            if !c.iter().all(|&p| p > 0.0 && p.is_finite()) {
                return Err(Error::BoundaryBeliefs(format!(
                    "edge ({i}, {j}) (q = {}, {}, xi = {})",
                    self.q[i], self.q[j], self.xi[e]
                )));
            }
        }
        Ok(())
    }

    /// `concat(q, ξ)`: the BP estimate of `E[f]` in canonical feature order.
    pub fn feature_expectations(&self) -> Vec<f64> {
        let mut k = self.q.clone();
        k.extend_from_slice(&self.xi);
        k
    }

    pub fn from_features(graph: &Graph, kappa: &[f64]) -> Result<Self> {
        if kappa.len() != graph.feature_count() {
            return Err(Error::LengthMismatch {
                what: "feature expectations",
                expected: graph.feature_count(),
                actual: kappa.len(),
            });
        }
        let (q, xi) = kappa.split_at(graph.node_count());
        Ok(Beliefs {
            q: q.to_vec(),
            xi: xi.to_vec(),
        })
    }
}

/// `concat(q, ξ)` of a belief set.
pub fn bp_feature_expectations(beliefs: &Beliefs) -> Vec<f64> {
    beliefs.feature_expectations()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpResult {
    pub beliefs: Beliefs,
    pub converged: bool,
    pub iterations: usize,
    pub final_delta: f64,
    /// Final log-ratio messages, usable as a warm start.
    pub messages: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Semiring {
    SumProduct,
    MaxProduct,
}

impl Semiring {
    /// Outgoing log-ratio for cavity log-odds `c` across coupling `w`.
    #[inline]
    fn message(self, c: f64, w: f64) -> f64 {
        match self {
            Semiring::SumProduct => softplus(c + w) - softplus(c),
            Semiring::MaxProduct => (c + w).max(0.0) - c.max(0.0),
        }
    }
}

struct Run {
    messages: Vec<f64>,
    converged: bool,
    iterations: usize,
    final_delta: f64,
}

/// `θ_i + Σ_{k ∈ N(i)} μ_{k→i}`.
fn node_field(model: &PairwiseBinaryModel, messages: &[f64], i: usize) -> f64 {
    let graph = model.graph();
    let mut h = model.theta()[i];
    for nb in graph.neighbors(i) {
        h += messages[incoming(graph, nb.edge, i)];
    }
    h
}

/// Index of the message flowing into `target` along `edge`.
#[inline]
fn incoming(graph: &Graph, edge: usize, target: usize) -> usize {
    if graph.edges()[edge].1 == target {
        2 * edge
    } else {
        2 * edge + 1
    }
}

fn initial_messages(graph: &Graph, options: &BpOptions) -> Vec<f64> {
    match options.init_seed {
        None => vec![0.0; 2 * graph.edge_count()],
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..2 * graph.edge_count())
                .map(|_| 2.0 * rng.random::<f64>() - 1.0)
                .collect()
        }
    }
}

fn propagate(
    model: &PairwiseBinaryModel,
    options: &BpOptions,
    mut messages: Vec<f64>,
    semiring: Semiring,
) -> Run {
    let graph = model.graph();
    let w = model.w();
    let d = options.damping;
    let mut scratch = messages.clone();
    let mut delta = f64::INFINITY;
    let mut iterations = 0;
    while iterations < options.max_iters {
        iterations += 1;
        delta = 0.0;
        match options.schedule {
            Schedule::Sequential => {
                for (e, &(i, j)) in graph.edges().iter().enumerate() {
                    for (src, slot) in [(i, 2 * e), (j, 2 * e + 1)] {
                        let cavity =
                            node_field(model, &messages, src) - messages[incoming(graph, e, src)];
                        let fresh = semiring.message(cavity, w[e]);
                        let updated = d * messages[slot] + (1.0 - d) * fresh;
                        delta = delta.max((updated - messages[slot]).abs());
                        messages[slot] = updated;
                    }
                }
            }
            Schedule::Synchronous => {
                let fields: Vec<f64> = (0..graph.node_count())
                    .map(|i| node_field(model, &messages, i))
                    .collect();
                for (e, &(i, j)) in graph.edges().iter().enumerate() {
                    for (src, slot) in [(i, 2 * e), (j, 2 * e + 1)] {
                        let cavity = fields[src] - messages[incoming(graph, e, src)];
                        let fresh = semiring.message(cavity, w[e]);
                        scratch[slot] = d * messages[slot] + (1.0 - d) * fresh;
                        delta = delta.max((scratch[slot] - messages[slot]).abs());
                    }
                }
                core::mem::swap(&mut messages, &mut scratch);
            }
        }
        if !delta.is_finite() {
            break;
        }
        if delta <= options.tol {
            return Run {
                messages,
                converged: true,
                iterations,
                final_delta: delta,
            };
        }
    }
    Run {
        messages,
        converged: false,
        iterations,
        final_delta: delta,
    }
}

fn beliefs_from_messages(model: &PairwiseBinaryModel, messages: &[f64]) -> Beliefs {
    let graph = model.graph();
    let fields: Vec<f64> = (0..graph.node_count())
        .map(|i| node_field(model, messages, i))
        .collect();
    let mut q: Vec<f64> = fields.iter().map(|&h| sigmoid(h)).collect();
    let mut xi = Vec::with_capacity(graph.edge_count());
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        let ci = fields[i] - messages[incoming(graph, e, i)];
        let cj = fields[j] - messages[incoming(graph, e, j)];
        let logs = [ci + cj + model.w()[e], ci, cj, 0.0];
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logs.iter().map(|l| (l - m).exp()).sum();
        xi.push((logs[0] - m).exp() / z);
    }
    clamp_interior(&mut q, &mut xi, graph, BELIEF_FLOOR);
    Beliefs { q, xi }
}

/// Loopy sum-product from uniform (or seeded random) messages.
///
/// Non-convergence is reported through [`BpResult::converged`], never as an error.
pub fn run_sum_product(model: &PairwiseBinaryModel, options: &BpOptions) -> Result<BpResult> {
    run_sum_product_from(model, options, None)
}

/// Sum-product starting from the given messages, e.g. from an earlier run.
pub fn run_sum_product_from(
    model: &PairwiseBinaryModel,
    options: &BpOptions,
    init: Option<&[f64]>,
) -> Result<BpResult> {
    options.validate()?;
    let graph = model.graph();
    let messages = match init {
        Some(m) if m.len() == 2 * graph.edge_count() => m.to_vec(),
        Some(m) => {
            return Err(Error::LengthMismatch {
                what: "messages",
                expected: 2 * graph.edge_count(),
                actual: m.len(),
            })
        }
        None => initial_messages(graph, options),
    };
    let run = propagate(model, options, messages, Semiring::SumProduct);
    Ok(BpResult {
        beliefs: beliefs_from_messages(model, &run.messages),
        converged: run.converged,
        iterations: run.iterations,
        final_delta: run.final_delta,
        messages: run.messages,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxProductResult {
    pub config: Vec<u8>,
    pub converged: bool,
    pub iterations: usize,
    /// Max-marginal log-odds per node; the decode is `1` where this is positive.
    pub log_odds: Vec<f64>,
}

/// Loopy max-product; each node takes the argmax of its max-marginal, ties to 0.
pub fn run_max_product(
    model: &PairwiseBinaryModel,
    options: &BpOptions,
) -> Result<MaxProductResult> {
    options.validate()?;
    let graph = model.graph();
    let run = propagate(
        model,
        options,
        initial_messages(graph, options),
        Semiring::MaxProduct,
    );
    let log_odds: Vec<f64> = (0..graph.node_count())
        .map(|i| node_field(model, &run.messages, i))
        .collect();
    Ok(MaxProductResult {
        config: log_odds.iter().map(|&h| u8::from(h > 0.0)).collect(),
        converged: run.converged,
        iterations: run.iterations,
        log_odds,
    })
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Bethe free energy `U - H_Bethe` of a belief set. On a tree at the BP fixed
/// point this equals `-log Z`.
pub fn bethe_free_energy(model: &PairwiseBinaryModel, beliefs: &Beliefs) -> Result<f64> {
    let graph = model.graph();
    beliefs.validate(graph)?;
    let mut energy = 0.0;
    let mut neg_entropy = 0.0;
    for (i, &q) in beliefs.q.iter().enumerate() {
        energy -= model.theta()[i] * q;
        let node_neg_entropy = plogp(q) + plogp(1.0 - q);
        neg_entropy -= (graph.degree(i) as f64 - 1.0) * node_neg_entropy;
    }
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        energy -= model.w()[e] * beliefs.xi[e];
        neg_entropy += cells(beliefs.q[i], beliefs.q[j], beliefs.xi[e])
            .iter()
            .map(|&p| plogp(p))
            .sum::<f64>();
    }
    Ok(energy + neg_entropy)
}
