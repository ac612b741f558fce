//! Graphs, pairwise binary models, datasets and priors.
//!
//! Feature order is fixed crate-wide: the `n` node features `x_i` come first,
//! followed by the edge features `x_i * x_j` in lexicographic edge order.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub node: usize,
    pub edge: usize,
}

/// Dimensions of a lattice built by [`grid_graph`]; nodes are row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn node(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }
}

/// Undirected simple graph with a canonical, sorted edge list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<Neighbor>>,
    grid: Option<GridShape>,
}

impl Graph {
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// `F = nodes + edges`.
    pub fn feature_count(&self) -> usize {
        self.node_count + self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[Neighbor] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn grid_shape(&self) -> Option<GridShape> {
        self.grid
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = if i < j { (i, j) } else { (j, i) };
        self.edges.binary_search(&key).ok()
    }

    /// Canonical feature names: `n<i>` for nodes, `e<i>_<j>` for edges.
    pub fn feature_names(&self) -> Vec<String> {
        (0..self.node_count)
            .map(|i| format!("n{i}"))
            .chain(self.edges.iter().map(|(i, j)| format!("e{i}_{j}")))
            .collect()
    }

    /// True when the graph has no cycles (a forest).
    pub fn is_forest(&self) -> bool {
        let mut parent: Vec<usize> = (0..self.node_count).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(i, j) in &self.edges {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a == b {
                return false;
            }
            parent[a] = b;
        }
        true
    }

    fn from_sorted(node_count: usize, edges: Vec<(usize, usize)>, grid: Option<GridShape>) -> Self {
        let mut adjacency = vec![Vec::new(); node_count];
        for (e, &(i, j)) in edges.iter().enumerate() {
            adjacency[i].push(Neighbor { node: j, edge: e });
            adjacency[j].push(Neighbor { node: i, edge: e });
        }
        Graph {
            node_count,
            edges,
            adjacency,
            grid,
        }
    }
}

/// Builds a canonical graph; pairs are normalized to `i < j` and sorted.
pub fn build_graph(node_count: usize, edge_list: &[(usize, usize)]) -> Result<Graph> {
    if node_count == 0 {
        return Err(Error::EmptyGraph);
    }
    let mut edges = Vec::with_capacity(edge_list.len());
    for &(a, b) in edge_list {
        if a == b {
            return Err(Error::SelfLoop(a));
        }
        if a >= node_count || b >= node_count {
            return Err(Error::NodeOutOfRange(a, b, node_count));
        }
        edges.push(if a < b { (a, b) } else { (b, a) });
    }
    edges.sort_unstable();
    if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateEdge(w[0].0, w[0].1));
    }
    Ok(Graph::from_sorted(node_count, edges, None))
}

/// Square lattice with nearest-neighbour edges and row-major node indices.
pub fn grid_graph(rows: usize, cols: usize) -> Result<Graph> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "grid dimensions must be positive, got {rows}x{cols}"
        )));
    }
    let shape = GridShape { rows, cols };
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let i = shape.node(r, c);
            if c + 1 < cols {
                edges.push((i, shape.node(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((i, shape.node(r + 1, c)));
            }
        }
    }
    edges.sort_unstable();
    Ok(Graph::from_sorted(rows * cols, edges, Some(shape)))
}

/// A `1 x n` grid.
pub fn chain_graph(n: usize) -> Result<Graph> {
    grid_graph(1, n)
}

fn check_config(graph: &Graph, config: &[u8]) -> Result<()> {
    if config.len() != graph.node_count() {
        return Err(Error::LengthMismatch {
            what: "configuration",
            expected: graph.node_count(),
            actual: config.len(),
        });
    }
    if let Some((index, &value)) = config.iter().enumerate().find(|(_, &v)| v > 1) {
        return Err(Error::NonBinary { index, value });
    }
    Ok(())
}

/// `f(x)`: node bits followed by edge products in canonical order.
pub fn feature_vector(graph: &Graph, config: &[u8]) -> Result<Vec<f64>> {
    check_config(graph, config)?;
    let mut f = Vec::with_capacity(graph.feature_count());
    f.extend(config.iter().map(|&b| f64::from(b)));
    f.extend(
        graph
            .edges()
            .iter()
            .map(|&(i, j)| f64::from(config[i] & config[j])),
    );
    Ok(f)
}

/// Binary random field `p(x) ∝ exp(θᵀx + Σ w_ij x_i x_j)` over `{0,1}` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseBinaryModel {
    graph: Arc<Graph>,
    lambda: Vec<f64>,
}

impl PairwiseBinaryModel {
    pub fn new(graph: impl Into<Arc<Graph>>, theta: &[f64], w: &[f64]) -> Result<Self> {
        let graph = graph.into();
        if theta.len() != graph.node_count() {
            return Err(Error::LengthMismatch {
                what: "theta",
                expected: graph.node_count(),
                actual: theta.len(),
            });
        }
        if w.len() != graph.edge_count() {
            return Err(Error::LengthMismatch {
                what: "w",
                expected: graph.edge_count(),
                actual: w.len(),
            });
        }
        let mut lambda = Vec::with_capacity(graph.feature_count());
        lambda.extend_from_slice(theta);
        lambda.extend_from_slice(w);
        Ok(PairwiseBinaryModel { graph, lambda })
    }

    pub fn from_lambda(graph: impl Into<Arc<Graph>>, lambda: &[f64]) -> Result<Self> {
        let graph = graph.into();
        if lambda.len() != graph.feature_count() {
            return Err(Error::LengthMismatch {
                what: "parameter vector",
                expected: graph.feature_count(),
                actual: lambda.len(),
            });
        }
        Ok(PairwiseBinaryModel {
            graph,
            lambda: lambda.to_vec(),
        })
    }

    pub fn zeros(graph: impl Into<Arc<Graph>>) -> Self {
        let graph = graph.into();
        let lambda = vec![0.0; graph.feature_count()];
        PairwiseBinaryModel { graph, lambda }
    }

    /// Same graph, new parameters. Panics on a length mismatch.
    pub fn with_lambda(&self, lambda: &[f64]) -> Self {
        assert_eq!(lambda.len(), self.lambda.len());
        PairwiseBinaryModel {
            graph: Arc::clone(&self.graph),
            lambda: lambda.to_vec(),
        }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn shared_graph(&self) -> Arc<Graph> {
        Arc::clone(&self.graph)
    }

    pub fn theta(&self) -> &[f64] {
        &self.lambda[..self.graph.node_count()]
    }

    pub fn w(&self) -> &[f64] {
        &self.lambda[self.graph.node_count()..]
    }

    /// `λ = concat(θ, w)`.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub(crate) fn score_unchecked(&self, config: &[u8]) -> f64 {
        let theta = self.theta();
        let w = self.w();
        let mut s = 0.0;
        for (i, &b) in config.iter().enumerate() {
            if b == 1 {
                s += theta[i];
            }
        }
        for (e, &(i, j)) in self.graph.edges().iter().enumerate() {
            if config[i] == 1 && config[j] == 1 {
                s += w[e];
            }
        }
        s
    }
}

/// `λᵀ f(x)`, without the partition function.
pub fn log_unnormalized(model: &PairwiseBinaryModel, config: &[u8]) -> Result<f64> {
    check_config(model.graph(), config)?;
    Ok(model.score_unchecked(config))
}

/// Converts a `±1` model `exp(Σ θ'_i s_i + Σ w'_ij s_i s_j)` into the
/// equivalent `{0,1}` model under `s = 2b - 1`.
pub fn convert_spin_model(
    theta_pm: &[f64],
    w_pm: &[f64],
    graph: impl Into<Arc<Graph>>,
) -> Result<PairwiseBinaryModel> {
    let graph = graph.into();
    if theta_pm.len() != graph.node_count() || w_pm.len() != graph.edge_count() {
        return Err(Error::LengthMismatch {
            what: "spin parameters",
            expected: graph.feature_count(),
            actual: theta_pm.len() + w_pm.len(),
        });
    }
    let mut theta: Vec<f64> = theta_pm.iter().map(|t| 2.0 * t).collect();
    let mut w = Vec::with_capacity(w_pm.len());
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        theta[i] -= 2.0 * w_pm[e];
        theta[j] -= 2.0 * w_pm[e];
        w.push(4.0 * w_pm[e]);
    }
    PairwiseBinaryModel::new(graph, &theta, &w)
}

/// Rows of `{0,1}` configurations, stored contiguously.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    node_count: usize,
    bits: Vec<u8>,
}

impl Dataset {
    pub fn new(node_count: usize, configs: &[Vec<u8>]) -> Result<Self> {
        let mut bits = Vec::with_capacity(node_count * configs.len());
        for c in configs {
            if c.len() != node_count {
                return Err(Error::LengthMismatch {
                    what: "configuration",
                    expected: node_count,
                    actual: c.len(),
                });
            }
            bits.extend_from_slice(c);
        }
        Self::from_flat(node_count, bits)
    }

    pub fn from_flat(node_count: usize, bits: Vec<u8>) -> Result<Self> {
        if node_count == 0 || !bits.len().is_multiple_of(node_count) {
            return Err(Error::LengthMismatch {
                what: "flat dataset",
                expected: node_count,
                actual: bits.len(),
            });
        }
        if let Some((index, &value)) = bits.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::NonBinary { index, value });
        }
        Ok(Dataset { node_count, bits })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn len(&self) -> usize {
        self.bits.len() / self.node_count
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn config(&self, n: usize) -> &[u8] {
        &self.bits[n * self.node_count..(n + 1) * self.node_count]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u8]> {
        self.bits.chunks_exact(self.node_count)
    }

    /// First `n` rows.
    pub fn truncated(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            node_count: self.node_count,
            bits: self.bits[..n * self.node_count].to_vec(),
        }
    }

    /// `Σ_n f(x_n)`.
    pub fn feature_sum(&self, graph: &Graph) -> Result<Vec<f64>> {
        if graph.node_count() != self.node_count {
            return Err(Error::LengthMismatch {
                what: "dataset width",
                expected: graph.node_count(),
                actual: self.node_count,
            });
        }
        let mut s = vec![0.0; graph.feature_count()];
        let n = graph.node_count();
        for x in self.iter() {
            for (i, &b) in x.iter().enumerate() {
                s[i] += f64::from(b);
            }
            for (e, &(i, j)) in graph.edges().iter().enumerate() {
                s[n + e] += f64::from(x[i] & x[j]);
            }
        }
        Ok(s)
    }
}

/// Zero-mean normal prior `N(0, Λ)` over the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub enum GaussianPrior {
    Isotropic {
        variance: f64,
    },
    Full {
        covariance: DMatrix<f64>,
        precision: DMatrix<f64>,
    },
}

impl GaussianPrior {
    pub fn isotropic(variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "prior variance must be positive and finite, got {variance}"
            )));
        }
        Ok(GaussianPrior::Isotropic { variance })
    }

    pub fn full(covariance: DMatrix<f64>) -> Result<Self> {
        if !covariance.is_square() {
            return Err(Error::InvalidArgument(
                "prior covariance must be square".into(),
            ));
        }
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-12 * covariance.amax().max(1.0) {
            return Err(Error::InvalidArgument(
                "prior covariance must be symmetric".into(),
            ));
        }
        let min_eig = math::min_eigenvalue(&covariance);
        if min_eig <= 0.0 {
            return Err(Error::NotPsd(min_eig));
        }
        let precision = covariance
            .clone()
            .cholesky()
            .ok_or(Error::NotPsd(min_eig))?
            .inverse();
        Ok(GaussianPrior::Full {
            covariance,
            precision,
        })
    }

    /// `Λ⁻¹ λ`.
    pub fn precision_mul(&self, lambda: &[f64]) -> Vec<f64> {
        match self {
            GaussianPrior::Isotropic { variance } => lambda.iter().map(|x| x / variance).collect(),
            GaussianPrior::Full { precision, .. } => {
                let v = precision * nalgebra::DVector::from_column_slice(lambda);
                v.as_slice().to_vec()
            }
        }
    }

    /// Dense `Λ⁻¹` of size `dim`.
    pub fn precision_matrix(&self, dim: usize) -> DMatrix<f64> {
        match self {
            GaussianPrior::Isotropic { variance } => DMatrix::identity(dim, dim) / *variance,
            GaussianPrior::Full { precision, .. } => precision.clone(),
        }
    }

    pub fn dimension_matches(&self, dim: usize) -> bool {
        match self {
            GaussianPrior::Isotropic { .. } => true,
            GaussianPrior::Full { covariance, .. } => covariance.nrows() == dim,
        }
    }

    /// `-½ λᵀΛ⁻¹λ`, dropping the normalizing constant.
    pub fn log_density_unnormalized(&self, lambda: &[f64]) -> f64 {
        -0.5 * math::dot(lambda, &self.precision_mul(lambda))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::vec::Vec as StdVec;

    fn brute_probs(model: &PairwiseBinaryModel) -> StdVec<f64> {
        let n = model.graph().node_count();
        let scores: StdVec<f64> = (0..1usize << n)
            .map(|s| {
                let x: StdVec<u8> = (0..n).map(|i| ((s >> i) & 1) as u8).collect();
                log_unnormalized(model, &x).unwrap()
            })
            .collect();
        let lz = math::log_sum_exp(&scores);
        scores.iter().map(|s| (s - lz).exp()).collect()
    }

    fn spin_probs(theta: &[f64], w: &[f64], graph: &Graph) -> StdVec<f64> {
        let n = graph.node_count();
        let scores: StdVec<f64> = (0..1usize << n)
            .map(|s| {
                let x: StdVec<f64> = (0..n)
                    .map(|i| if (s >> i) & 1 == 1 { 1.0 } else { -1.0 })
                    .collect();
                let mut v: f64 = (0..n).map(|i| theta[i] * x[i]).sum();
                for (e, &(i, j)) in graph.edges().iter().enumerate() {
                    v += w[e] * x[i] * x[j];
                }
                v
            })
            .collect();
        let lz = math::log_sum_exp(&scores);
        scores.iter().map(|s| (s - lz).exp()).collect()
    }

    #[test]
    fn build_graph_cases() {
        let g = build_graph(1, &[]).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (1, 0));
        let g = build_graph(2, &[(1, 0)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert!(matches!(
            build_graph(3, &[(0, 1), (0, 1)]),
            Err(Error::DuplicateEdge(0, 1))
        ));
        assert!(matches!(
            build_graph(3, &[(0, 1), (1, 0)]),
            Err(Error::DuplicateEdge(0, 1))
        ));
        assert!(matches!(build_graph(3, &[(2, 2)]), Err(Error::SelfLoop(2))));
        assert!(matches!(
            build_graph(3, &[(0, 3)]),
            Err(Error::NodeOutOfRange(0, 3, 3))
        ));
        assert!(matches!(build_graph(0, &[]), Err(Error::EmptyGraph)));
    }

    #[test]
    fn grid_graph_counts() {
        let g = grid_graph(1, 1).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (1, 0));
        let g = grid_graph(2, 2).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (4, 4));
        // Oracle: count horizontal and vertical pairs directly.
        let g = grid_graph(5, 5).unwrap();
        let mut count = 0;
        for a in 0..25usize {
            for b in (a + 1)..25 {
                let (ra, ca, rb, cb) = (a / 5, a % 5, b / 5, b % 5);
                if (ra == rb && cb == ca + 1) || (ca == cb && rb == ra + 1) {
                    count += 1;
                    assert!(g.edge_index(a, b).is_some());
                }
            }
        }
        assert_eq!(count, 40);
        assert_eq!(
            (g.node_count(), g.edge_count(), g.feature_count()),
            (25, 40, 65)
        );
        assert!(grid_graph(0, 3).is_err());
        assert!(g.edges().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn feature_vector_cases() {
        let g = chain_graph(2).unwrap();
        assert_eq!(feature_vector(&g, &[1, 1]).unwrap(), [1.0, 1.0, 1.0]);
        assert_eq!(feature_vector(&g, &[1, 0]).unwrap(), [1.0, 0.0, 0.0]);
        assert_eq!(feature_vector(&g, &[0, 0]).unwrap(), [0.0, 0.0, 0.0]);
        assert!(feature_vector(&g, &[1]).is_err());
        assert!(feature_vector(&g, &[1, 2]).is_err());
    }

    #[test]
    fn log_unnormalized_cases() {
        let m = PairwiseBinaryModel::new(build_graph(1, &[]).unwrap(), &[1.0], &[]).unwrap();
        assert_eq!(log_unnormalized(&m, &[1]).unwrap(), 1.0);
        let g = chain_graph(2).unwrap();
        let m = PairwiseBinaryModel::new(g, &[1.0, 2.0], &[0.5]).unwrap();
        assert_eq!(log_unnormalized(&m, &[0, 0]).unwrap(), 0.0);
        assert_eq!(log_unnormalized(&m, &[1, 1]).unwrap(), 3.5);
        assert!(log_unnormalized(&m, &[1, 1, 1]).is_err());
    }

    #[test]
    fn spin_conversion_cases() {
        let g1 = build_graph(1, &[]).unwrap();
        let m = convert_spin_model(&[0.5], &[], g1.clone()).unwrap();
        assert!((m.theta()[0] - 1.0).abs() < 1e-15);
        // p(1)/p(0) = e^{0.5}/e^{-0.5} in spin form, e^{θ} in binary form.
        let p = brute_probs(&m);
        assert!((p[1] / p[0] - 1.0f64.exp()).abs() < 1e-12);

        let g = chain_graph(2).unwrap();
        let m = convert_spin_model(&[0.0, 0.0], &[0.0], g.clone()).unwrap();
        assert!(m.lambda().iter().all(|&v| v == 0.0));

        let m = convert_spin_model(&[0.0, 0.0], &[1.0], g.clone()).unwrap();
        assert_eq!(m.w(), &[4.0]);
        assert_eq!(m.theta(), &[-2.0, -2.0]);
        let pb = brute_probs(&m);
        let ps = spin_probs(&[0.0, 0.0], &[1.0], &g);
        for (a, b) in pb.iter().zip(&ps) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(convert_spin_model(&[0.0], &[1.0], g).is_err());
    }

    #[test]
    fn forest_detection() {
        assert!(chain_graph(5).unwrap().is_forest());
        assert!(!grid_graph(2, 2).unwrap().is_forest());
    }

    #[test]
    fn prior_validation() {
        assert!(GaussianPrior::isotropic(0.0).is_err());
        let p = GaussianPrior::isotropic(2.0).unwrap();
        assert_eq!(p.precision_mul(&[2.0, 4.0]), [1.0, 2.0]);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GaussianPrior::full(bad).is_err());
        let good = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = GaussianPrior::full(good.clone()).unwrap();
        let prod = &good * p.precision_matrix(2);
        assert!((prod - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (2usize..8).prop_flat_map(|n| {
            let pairs: StdVec<(usize, usize)> = (0..n)
                .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                .collect();
            proptest::sample::subsequence(pairs.clone(), 0..=pairs.len())
                .prop_map(move |es| build_graph(n, &es).unwrap())
        })
    }

    fn arb_model() -> impl Strategy<Value = PairwiseBinaryModel> {
        arb_graph().prop_flat_map(|g| {
            let f = g.feature_count();
            proptest::collection::vec(-2.0f64..2.0, f)
                .prop_map(move |l| PairwiseBinaryModel::from_lambda(g.clone(), &l).unwrap())
        })
    }

    proptest! {
        #[test]
        fn features_consistent_with_score(m in arb_model(), seed in 0u64..1000) {
            let n = m.graph().node_count();
            let x: StdVec<u8> = (0..n).map(|i| ((seed >> (i % 10)) & 1) as u8).collect();
            let f = feature_vector(m.graph(), &x).unwrap();
            let lhs = math::dot(m.lambda(), &f);
            prop_assert!((lhs - log_unnormalized(&m, &x).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn spin_conversion_preserves_distribution(g in arb_graph(), seed in proptest::collection::vec(-1.0f64..1.0, 40)) {
            let theta = &seed[..g.node_count()];
            let w = &seed[g.node_count()..g.node_count() + g.edge_count()];
            let m = convert_spin_model(theta, w, g.clone()).unwrap();
            let pb = brute_probs(&m);
            let ps = spin_probs(theta, w, &g);
            for (a, b) in pb.iter().zip(&ps) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn lambda_split_roundtrip(m in arb_model()) {
            let rebuilt = PairwiseBinaryModel::new(m.shared_graph(), m.theta(), m.w()).unwrap();
            prop_assert_eq!(rebuilt.lambda(), m.lambda());
        }
    }
}
