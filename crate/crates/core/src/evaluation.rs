//! Cramér–von Mises discrepancy between two parameter sample sets.

use alloc::vec::Vec;

use crate::posterior::ParameterSampleSet;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CvmReport {
    pub total: f64,
    pub per_dimension: Vec<f64>,
}

/// `Σ_i (F₁(x_i) - F₂(x_i))²` over all pooled points `x_i`, duplicates
/// included, with `F(x)` the fraction of samples `≤ x`. Unnormalized;
/// `total` sums the per-dimension scores.
pub fn cvm_score(s1: &ParameterSampleSet, s2: &ParameterSampleSet) -> Result<CvmReport> {
    if s1.dim() != s2.dim() {
        return Err(Error::LengthMismatch {
            what: "sample set dimension",
            expected: s1.dim(),
            actual: s2.dim(),
        });
    }
    if s1.is_empty() || s2.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot score an empty sample set".into(),
        ));
    }
    let per_dimension: Vec<f64> = (0..s1.dim())
        .map(|k| cvm_1d(&s1.column(k), &s2.column(k)))
        .collect();
    Ok(CvmReport {
        total: per_dimension.iter().sum(),
        per_dimension,
    })
}

/// One-dimensional score of two non-empty samples.
pub fn cvm_1d(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ecdf_diff = |x: f64| {
        let fa = a.partition_point(|&v| v <= x) as f64 / na;
        let fb = b.partition_point(|&v| v <= x) as f64 / nb;
        (fa - fb) * (fa - fb)
    };
    let mut pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.into_iter().map(ecdf_diff).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::Provenance;
    use alloc::vec;
    use proptest::prelude::*;

    fn set(dim: usize, data: Vec<f64>) -> ParameterSampleSet {
        ParameterSampleSet::new(
            dim,
            data,
            Provenance {
                method: "t".into(),
                seed: 0,
                thinning: 1,
            },
        )
        .unwrap()
    }

    #[test]
    fn unit_values() {
        assert_eq!(
            cvm_score(&set(1, vec![0.0]), &set(1, vec![1.0]))
                .unwrap()
                .total,
            1.0
        );
        assert_eq!(
            cvm_score(&set(1, vec![0.0, 0.0]), &set(1, vec![0.0, 1.0]))
                .unwrap()
                .total,
            0.75
        );
        let s = set(2, vec![0.3, 1.0, -2.0, 4.0, 0.0, 0.0]);
        let r = cvm_score(&s, &s).unwrap();
        assert_eq!(r.total, 0.0);
        assert_eq!(r.per_dimension, vec![0.0, 0.0]);
    }

    #[test]
    fn errors() {
        assert!(cvm_score(&set(1, vec![0.0]), &set(2, vec![0.0, 1.0])).is_err());
        assert!(cvm_score(&set(1, vec![]), &set(1, vec![0.0])).is_err());
    }

    #[test]
    fn interleaving_lowers_the_score() {
        let disjoint = cvm_1d(&[0.0, 1.0, 2.0], &[3.0, 4.0, 5.0]);
        let partial = cvm_1d(&[0.0, 1.0, 3.0], &[2.0, 4.0, 5.0]);
        let mixed = cvm_1d(&[0.0, 2.0, 4.0], &[1.0, 3.0, 5.0]);
        assert!(disjoint > partial && partial > mixed);
    }

    proptest! {
        #[test]
        fn symmetric_nonnegative_and_permutation_invariant(
            a in proptest::collection::vec(-5.0f64..5.0, 1..40),
            b in proptest::collection::vec(-5.0f64..5.0, 1..40),
            rot in 0usize..40,
        ) {
            let ab = cvm_1d(&a, &b);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, cvm_1d(&b, &a));
            let mut shuffled = a.clone();
            let r = rot % shuffled.len();
            shuffled.rotate_left(r);
            shuffled.reverse();
            prop_assert_eq!(ab, cvm_1d(&shuffled, &b));
            prop_assert_eq!(cvm_1d(&a, &a), 0.0);
        }

        #[test]
        fn total_is_sum_of_dimensions(data in proptest::collection::vec(-3.0f64..3.0, 6..30)) {
            let n = data.len() / 3 * 3;
            let s1 = set(3, data[..n].to_vec());
            let s2 = set(3, data[..n].iter().map(|v| v * 0.5 + 0.1).collect());
            let r = cvm_score(&s1, &s2).unwrap();
            prop_assert!((r.total - r.per_dimension.iter().sum::<f64>()).abs() < 1e-12);
        }
    }
}
