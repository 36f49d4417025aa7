//! Reference combiners: spectral rank-one fit, plain average and known true weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{orient_majority_positive, rank_one_offdiag, RankOneOptions};
use crate::model::{sample_covariance, CovarianceMatrix, LatentStructure, ScoreMatrix, WeightScale, WeightVector};
use crate::scalar::Real;
use crate::simulation::SimulationTruth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Eigen,
    Average,
    GroundTruth,
}

/// Options for [`fit_eigen_cov`].
#[derive(Debug, Clone, Default)]
pub struct EigenOptions {
    /// Restrict the fit to pairs in different groups of this structure.
    pub cross_block: Option<LatentStructure>,
}

/// Rank-one fit to the off-diagonal sample covariance.
pub fn fit_eigen<T: Real>(scores: &ScoreMatrix<T>) -> Result<WeightVector<T>> {
    let z = scores.ensure_standardized()?;
    fit_eigen_cov(&sample_covariance(&z)?, &EigenOptions::default())
}

pub fn fit_eigen_cov<T: Real>(cov: &CovarianceMatrix<T>, opts: &EigenOptions) -> Result<WeightVector<T>> {
    let m = cov.dim();
    if m < 3 {
        return Err(Error::TooFewPredictors { needed: 3, found: m });
    }
    if let Some(st) = &opts.cross_block {
        if st.n_predictors() != m {
            return Err(Error::LengthMismatch { expected: m, found: st.n_predictors() });
        }
    }
    let mask = |i: usize, j: usize| match &opts.cross_block {
        Some(st) => st.group_of(i) != st.group_of(j),
        None => true,
    };
    let (mut v, _) = rank_one_offdiag(
        cov.entries(),
        &mask,
        None,
        RankOneOptions { tol: T::lit(1e-10), max_iter: 10_000 },
    )?;
    orient_majority_positive(&mut v);
    WeightVector::new(v, WeightScale::Relative)
}

/// Equal weights `1/M`.
pub fn fit_average<T: Real>(m: usize) -> Result<WeightVector<T>> {
    if m == 0 {
        return Err(Error::TooFewPredictors { needed: 1, found: 0 });
    }
    WeightVector::new(vec![T::one() / T::from_usize_lossy(m); m], WeightScale::Absolute)
}

/// True weights of a simulated dataset.
pub fn fit_ground_truth<T: Real>(truth: Option<&SimulationTruth<T>>) -> Result<WeightVector<T>> {
    let truth = truth.ok_or(Error::TruthUnavailable)?;
    WeightVector::new(truth.true_weights.clone(), WeightScale::Absolute)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn eigen_recovers_rank_one() {
        let v = [0.7f64, 0.5, 0.9, 0.3, 0.6];
        let r = DMatrix::from_fn(5, 5, |i, j| if i == j { 1.0 } else { v[i] * v[j] });
        let w = fit_eigen_cov(&CovarianceMatrix::new(r, None).unwrap(), &EigenOptions::default()).unwrap();
        let scale = w.as_slice()[0] / v[0];
        for i in 0..5 {
            assert!((w.as_slice()[i] / scale - v[i]).abs() < 1e-8);
        }
        assert_eq!(w.scale(), WeightScale::Relative);
    }

    #[test]
    fn eigen_equal_offdiag_is_average() {
        let r = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.36 });
        let w = fit_eigen_cov(&CovarianceMatrix::new(r, None).unwrap(), &EigenOptions::default()).unwrap();
        let avg = fit_average::<f64>(4).unwrap();
        let s = w.as_slice()[0] / avg.as_slice()[0];
        for i in 0..4 {
            assert!((w.as_slice()[i] - s * avg.as_slice()[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn eigen_cross_block_ignores_within() {
        let v = [0.7f64, 0.5, 0.9, 0.3];
        let st = LatentStructure::from_sizes(&[2, 2]).unwrap();
        let r = DMatrix::from_fn(4, 4, |i, j| {
            if i == j {
                1.0
            } else if st.group_of(i) == st.group_of(j) {
                0.95
            } else {
                v[i] * v[j]
            }
        });
        let opts = EigenOptions { cross_block: Some(st) };
        let w = fit_eigen_cov(&CovarianceMatrix::new(r, None).unwrap(), &opts).unwrap();
        let w = w.as_slice();
        assert!((w[0] * w[2] / (w[1] * w[3]) - (v[0] * v[2]) / (v[1] * v[3])).abs() < 1e-8);
    }

    #[test]
    fn eigen_needs_three() {
        let r = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            fit_eigen_cov(&CovarianceMatrix::new(r, None).unwrap(), &EigenOptions::default()),
            Err(Error::TooFewPredictors { .. })
        ));
    }

    #[test]
    fn average_sums_to_one() {
        for m in 1..6 {
            let s: f64 = fit_average::<f64>(m).unwrap().as_slice().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ground_truth_requires_truth() {
        assert_eq!(fit_ground_truth::<f64>(None).unwrap_err(), Error::TruthUnavailable);
    }
}
