//! Linear-response feature covariance.
//!
//! At a BP fixed point the parameters are explicit functions of the beliefs:
//!
//! ```text
//! w_ij = log( p11 p00 / (p10 p01) )
//! θ_i  = (z_i - 1) log((1 - q_i) / q_i) + Σ_{j ∈ N(i)} log( p10_ij / p00_ij )
//! ```
//!
//! where `p11 = ξ_ij`, `p10 = q_i - ξ_ij`, `p01 = q_j - ξ_ij` and
//! `p00 = 1 - q_i - q_j + ξ_ij` are the cells of the edge belief seen from `i`.
//! The Jacobian `∂λ/∂(q, ξ)` of this map is the inverse of the covariance
//! `∂(q, ξ)/∂λ`, so inverting it yields the linear-response estimate of `C`.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::bp::{cells, run_sum_product, Beliefs, BpOptions, BpResult};
use crate::graph::{Graph, PairwiseBinaryModel};
use crate::math::{self, JITTER};
use crate::{Error, Result};

/// Negative eigenvalues above this are clipped; below it the covariance is rejected.
pub const PSD_REPAIR_TOLERANCE: f64 = 1e-6;
const SINGULAR_CONDITION: f64 = 1e14;

/// Parameters `(θ, w)` whose BP fixed point has the given beliefs.
pub fn fixed_point_params(beliefs: &Beliefs, graph: &Graph) -> Result<(Vec<f64>, Vec<f64>)> {
    beliefs.validate(graph)?;
    let q = &beliefs.q;
    let mut theta: Vec<f64> = q
        .iter()
        .enumerate()
        .map(|(i, &qi)| (graph.degree(i) as f64 - 1.0) * ((1.0 - qi) / qi).ln())
        .collect();
    let mut w = Vec::with_capacity(graph.edge_count());
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        let [p11, p10, p01, p00] = cells(q[i], q[j], beliefs.xi[e]);
        w.push(p11.ln() + p00.ln() - p10.ln() - p01.ln());
        theta[i] += p10.ln() - p00.ln();
        theta[j] += p01.ln() - p00.ln();
    }
    Ok((theta, w))
}

/// [`fixed_point_params`] as one canonical parameter vector.
pub fn fixed_point_lambda(beliefs: &Beliefs, graph: &Graph) -> Result<Vec<f64>> {
    let (mut theta, w) = fixed_point_params(beliefs, graph)?;
    theta.extend_from_slice(&w);
    Ok(theta)
}

/// `∂λ/∂μ` at a belief point. Rows are parameters `(θ, w)`, columns are
/// moments `(q, ξ)`, both in canonical feature order.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub matrix: DMatrix<f64>,
    pub node_count: usize,
    pub edge_count: usize,
}

/// Analytic Jacobian of the fixed-point parameter map.
///
/// Sparse by construction: `∂w_ij` touches only `q_i, q_j, ξ_ij`, and `∂θ_i`
/// touches `q_i` plus `q_j, ξ_ij` for each neighbour `j`.
pub fn jacobian(beliefs: &Beliefs, graph: &Graph) -> Result<Jacobian> {
    beliefs.validate(graph)?;
    let n = graph.node_count();
    let f = graph.feature_count();
    let q = &beliefs.q;
    let mut m = DMatrix::<f64>::zeros(f, f);
    for i in 0..n {
        let z = graph.degree(i) as f64;
        m[(i, i)] = -(z - 1.0) / (q[i] * (1.0 - q[i]));
    }
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        let [p11, p10, p01, p00] = cells(q[i], q[j], beliefs.xi[e]);
        let (inv11, inv10, inv01, inv00) = (1.0 / p11, 1.0 / p10, 1.0 / p01, 1.0 / p00);
        let row = n + e;
        // w_ij = log p11 + log p00 - log p10 - log p01
        m[(row, i)] = -inv00 - inv10;
        m[(row, j)] = -inv00 - inv01;
        m[(row, row)] = inv11 + inv00 + inv10 + inv01;
        // θ_i gains log p10 - log p00; θ_j gains log p01 - log p00
        m[(i, i)] += inv10 + inv00;
        m[(j, j)] += inv01 + inv00;
        m[(i, j)] += inv00;
        m[(j, i)] += inv00;
        m[(i, row)] = -inv10 - inv00;
        m[(j, row)] = -inv01 - inv00;
    }
    Ok(Jacobian {
        matrix: m,
        node_count: n,
        edge_count: graph.edge_count(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrCovariance {
    pub covariance: DMatrix<f64>,
    /// `max|eig| / min|eig|` of the Jacobian that was inverted.
    pub inverse_jacobian_condition: f64,
    pub psd_repair_applied: bool,
    /// Smallest eigenvalue of the symmetrized inverse, before any repair.
    pub min_eigenvalue_before_repair: f64,
}

/// Inverts the Jacobian at `beliefs` into a symmetric PSD covariance.
pub fn lr_covariance_at(beliefs: &Beliefs, graph: &Graph) -> Result<LrCovariance> {
    let jac = jacobian(beliefs, graph)?.matrix;
    let f = jac.nrows();
    if f == 0 {
        return Ok(LrCovariance {
            covariance: jac,
            inverse_jacobian_condition: 1.0,
            psd_repair_applied: false,
            min_eigenvalue_before_repair: 0.0,
        });
    }
    let mut sym = jac.clone();
    math::symmetrize(&mut sym);
    let eig = math::symmetric_eigenvalues(&sym);
    let largest = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let smallest = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let condition = if smallest > 0.0 {
        largest / smallest
    } else {
        f64::INFINITY
    };
    if !(condition < SINGULAR_CONDITION) {
        return Err(Error::Singular(condition));
    }
    let mut c = jac.lu().try_inverse().ok_or(Error::Singular(condition))?;
    math::symmetrize(&mut c);
    let (covariance, repaired, min_eig) = repair_psd(c)?;
    Ok(LrCovariance {
        covariance,
        inverse_jacobian_condition: condition,
        psd_repair_applied: repaired,
        min_eigenvalue_before_repair: min_eig,
    })
}

/// Clips small negative eigenvalues; rejects large ones.
pub(crate) fn repair_psd(c: DMatrix<f64>) -> Result<(DMatrix<f64>, bool, f64)> {
    let n = c.nrows();
    let eig = nalgebra::SymmetricEigen::new(c.clone());
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok((c, false, min));
    }
    if min < -PSD_REPAIR_TOLERANCE {
        return Err(Error::NotPsd(min));
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let mut fixed =
        &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    math::symmetrize(&mut fixed);
    fixed += DMatrix::<f64>::identity(n, n) * JITTER;
    Ok((fixed, true, min))
}

/// Result of [`lr_covariance`]: the covariance plus the BP run it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LrRun {
    pub lr: LrCovariance,
    pub bp: BpResult,
}

/// Runs sum-product on `model` and inverts the Jacobian at its fixed point.
pub fn lr_covariance(model: &PairwiseBinaryModel, options: &BpOptions) -> Result<LrRun> {
    let bp = run_sum_product(model, options)?;
    if !bp.converged {
        return Err(Error::BpNotConverged(alloc::boxed::Box::new(bp)));
    }
    let lr = lr_covariance_at(&bp.beliefs, model.graph())?;
    Ok(LrRun { lr, bp })
}

/// `M C Mᵀ` for any conformable `M`.
pub fn aggregate(c: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !c.is_square() || m.ncols() != c.nrows() {
        return Err(Error::LengthMismatch {
            what: "aggregation matrix columns",
            expected: c.nrows(),
            actual: m.ncols(),
        });
    }
    let mut out = m * c * m.transpose();
    math::symmetrize(&mut out);
    Ok(out)
}

/// Covariance of tied (summed) features `A f`, where each column of `A` has at
/// most one nonzero entry so the features split into disjoint groups.
pub fn tie_project(c: &DMatrix<f64>, tying: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    for (col, column) in tying.column_iter().enumerate() {
        if column.iter().filter(|&&v| v != 0.0).count() > 1 {
            return Err(Error::InvalidArgument(alloc::format!(
                "tying matrix column {col} has more than one nonzero entry"
            )));
        }
    }
    aggregate(c, tying)
}

/// Tying matrix from a group index per feature (`None` drops the feature).
pub fn tying_matrix(groups: &[Option<usize>], group_count: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(group_count, groups.len());
    for (f, g) in groups.iter().enumerate() {
        if let Some(g) = *g {
            a[(g, f)] = 1.0;
        }
    }
    a
}
