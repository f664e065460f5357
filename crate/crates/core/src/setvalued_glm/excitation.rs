use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{Feature, GlmError};

/// Relative tolerance on `λ_min(A) / trace(A)` below which `A` is treated
/// as singular.
pub const EXCITATION_RTOL: f64 = 1e-12;

/// `A = Σ φφᵀ` and its smallest eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationReport {
    pub a: Vec<Vec<f64>>,
    pub lambda_min: f64,
    pub ok: bool,
}

impl ExcitationReport {
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.a.len();
        DMatrix::from_fn(n, n, |i, j| self.a[i][j])
    }

    pub fn trace(&self) -> f64 {
        (0..self.a.len()).map(|i| self.a[i][i]).sum()
    }
}

pub(crate) fn gram(features: &[Feature]) -> Result<DMatrix<f64>, GlmError> {
    let first = features.first().ok_or(GlmError::Empty)?;
    let n = first.len();
    if n == 0 {
        return Err(GlmError::Empty);
    }
    let mut a = DMatrix::<f64>::zeros(n, n);
    for phi in features {
        if phi.len() != n {
            return Err(GlmError::DimensionMismatch {
                expected: n,
                found: phi.len(),
            });
        }
        let v = phi.as_slice();
        for i in 0..n {
            for j in i..n {
                a[(i, j)] += v[i] * v[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    Ok(a)
}

pub(crate) fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Persistent-excitation check: is `Σ φφᵀ` positive definite?
pub fn check_excitation(features: &[Feature]) -> Result<ExcitationReport, GlmError> {
    let a = gram(features)?;
    let lambda_min = min_eigenvalue(&a);
    let trace = a.trace();
    let ok = lambda_min > EXCITATION_RTOL * trace.max(f64::MIN_POSITIVE);
    let n = a.nrows();
    Ok(ExcitationReport {
        a: (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect(),
        lambda_min,
        ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn feats(rows: &[&[f64]]) -> Vec<Feature> {
        rows.iter().map(|r| Feature::new(r.to_vec()).unwrap()).collect()
    }

    #[test]
    fn orthonormal_basis_is_identity() {
        let r = check_excitation(&feats(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(r.a, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!((r.lambda_min - 1.0).abs() < 1e-12);
        assert!(r.ok);
    }

    #[test]
    fn rank_deficient_is_rejected() {
        let r = check_excitation(&feats(&[&[1.0, 0.0], &[2.0, 0.0]])).unwrap();
        assert!(r.lambda_min.abs() < 1e-12);
        assert!(!r.ok);
    }

    #[test]
    fn hand_computed_gram() {
        let r = check_excitation(&feats(&[&[1.0, 1.0], &[1.0, -1.0], &[2.0, 0.0]])).unwrap();
        assert_eq!(r.a, vec![vec![6.0, 0.0], vec![0.0, 2.0]]);
        assert!((r.lambda_min - 2.0).abs() < 1e-12);
        assert!(r.ok);
    }

    #[test]
    fn errors_on_empty_and_mismatch() {
        assert_eq!(check_excitation(&[]), Err(GlmError::Empty));
        assert!(matches!(
            check_excitation(&feats(&[&[1.0], &[1.0, 2.0]])),
            Err(GlmError::DimensionMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn gram_is_symmetric_psd(rows in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 1..12)) {
            let f: Vec<Feature> = rows.into_iter().map(|r| Feature::new(r).unwrap()).collect();
            let r = check_excitation(&f).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert_eq!(r.a[i][j], r.a[j][i]);
                }
            }
            prop_assert!(r.lambda_min >= -1e-9 * r.trace().max(1.0));
        }
    }
}
