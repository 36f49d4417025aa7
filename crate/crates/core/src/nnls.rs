//! Nonnegative least squares (Lawson–Hanson active set) with a minimum-norm variant.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::lstsq_min_norm;
use crate::scalar::Real;

/// KKT tolerance on the gradient of `½‖Ax − b‖²`.
pub const KKT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsResult<T: Real> {
    pub x: DVector<T>,
    pub iterations: usize,
    pub kkt_residual: T,
}

/// Largest KKT violation of `x` for `min ½‖Ax − b‖², x ≥ 0`.
///
/// Zero coordinates contribute `max(−∇_j, 0)`, positive ones `|∇_j|`.
pub fn kkt_residual<T: Real>(a: &DMatrix<T>, b: &DVector<T>, x: &DVector<T>) -> T {
    let grad = a.transpose() * (a * x - b);
    let mut worst = T::zero();
    for j in 0..x.len() {
        let v = if x[j] > T::zero() { grad[j].abs() } else { (-grad[j]).max(T::zero()) };
        worst = worst.max(v);
    }
    worst
}

/// Solves `min ‖Ax − b‖` subject to `x ≥ 0`.
///
/// Every least-squares solve on the passive set counts as one iteration; more than
/// `max_iter` of them yields `SolverDiverged`.
pub fn nnls<T: Real>(a: &DMatrix<T>, b: &DVector<T>, max_iter: usize) -> Result<NnlsResult<T>> {
    let (e, p) = a.shape();
    if b.len() != e {
        return Err(Error::LengthMismatch { expected: e, found: b.len() });
    }
    let mut x = DVector::zeros(p);
    let mut passive = vec![false; p];
    let atb = a.transpose() * b;
    let tol = T::lit(1e-13) * atb.amax().max(T::one());
    let mut iterations = 0;
    loop {
        let w = a.transpose() * (b - a * &x);
        let mut enter = None;
        for j in 0..p {
            if !passive[j] && w[j] > tol && enter.is_none_or(|t: usize| w[j] > w[t]) {
                enter = Some(j);
            }
        }
        let Some(t) = enter else { break };
        passive[t] = true;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::SolverDiverged {
                    iterations: max_iter,
                    kkt: kkt_residual(a, b, &x).as_f64(),
                });
            }
            let cols: Vec<usize> = (0..p).filter(|&j| passive[j]).collect();
            let sub = a.select_columns(&cols);
            let zp = lstsq_min_norm(&sub, b)?;
            if zp.iter().all(|&v| v > T::zero()) {
                x.fill(T::zero());
                for (idx, &j) in cols.iter().enumerate() {
                    x[j] = zp[idx];
                }
                break;
            }
            let mut alpha = T::one();
            let mut blocking = None;
            for (idx, &j) in cols.iter().enumerate() {
                if zp[idx] <= T::zero() {
                    let step = x[j] / (x[j] - zp[idx]);
                    if blocking.is_none() || step < alpha {
                        alpha = step;
                        blocking = Some(j);
                    }
                }
            }
            for (idx, &j) in cols.iter().enumerate() {
                let xj = x[j];
                x[j] = xj + alpha * (zp[idx] - xj);
            }
            if let Some(j) = blocking {
                x[j] = T::zero();
            }
            let drop_tol = T::lit(1e-15) * x.amax().max(T::one());
            for &j in &cols {
                if x[j] <= drop_tol {
                    x[j] = T::zero();
                    passive[j] = false;
                }
            }
            if !passive.iter().any(|&f| f) {
                break;
            }
        }
    }
    let kkt = kkt_residual(a, b, &x);
    Ok(NnlsResult { x, iterations, kkt_residual: kkt })
}

/// Minimum-Euclidean-norm minimizer of `‖Ax − b‖` over `x ≥ 0`.
///
/// A lightly ridge-regularized problem identifies the support of the minimum-norm solution;
/// the pseudo-inverse on that support then removes the ridge bias. Falls back to the plain
/// active-set solution when the polished point is infeasible or misses the KKT tolerance.
pub fn nnls_min_norm<T: Real>(a: &DMatrix<T>, b: &DVector<T>, max_iter: usize) -> Result<NnlsResult<T>> {
    let (e, p) = a.shape();
    let ridge = T::lit(1e-10).sqrt();
    let mut aug = DMatrix::zeros(e + p, p);
    aug.view_mut((0, 0), (e, p)).copy_from(a);
    for j in 0..p {
        aug[(e + j, j)] = ridge;
    }
    let mut baug = DVector::zeros(e + p);
    baug.rows_mut(0, e).copy_from(b);
    let kkt_tol = T::tol(KKT_TOL);

    if let Ok(reg) = nnls(&aug, &baug, max_iter) {
        if let Some(polished) = polish(a, b, &reg.x)? {
            let kkt = kkt_residual(a, b, &polished);
            if kkt <= kkt_tol {
                return Ok(NnlsResult { x: polished, iterations: reg.iterations, kkt_residual: kkt });
            }
        }
    }
    let plain = nnls(a, b, max_iter)?;
    if let Some(polished) = polish(a, b, &plain.x)? {
        let kkt = kkt_residual(a, b, &polished);
        if kkt <= kkt_tol {
            return Ok(NnlsResult { x: polished, iterations: plain.iterations, kkt_residual: kkt });
        }
    }
    if plain.kkt_residual <= kkt_tol {
        Ok(plain)
    } else {
        Err(Error::SolverDiverged { iterations: plain.iterations, kkt: plain.kkt_residual.as_f64() })
    }
}

/// Min-norm least squares restricted to the support of `x`; `None` when it leaves the orthant.
fn polish<T: Real>(a: &DMatrix<T>, b: &DVector<T>, x: &DVector<T>) -> Result<Option<DVector<T>>> {
    let p = x.len();
    let thresh = T::lit(1e-9) * x.amax().max(T::one());
    let support: Vec<usize> = (0..p).filter(|&j| x[j] > thresh).collect();
    let mut out = DVector::zeros(p);
    if support.is_empty() {
        return Ok(Some(out));
    }
    let sol = lstsq_min_norm(&a.select_columns(&support), b)?;
    let neg_tol = T::lit(1e-12) * sol.amax().max(T::one());
    if sol.iter().any(|&v| v < -neg_tol) {
        return Ok(None);
    }
    for (idx, &j) in support.iter().enumerate() {
        out[j] = sol[idx].max(T::zero());
    }
    Ok(Some(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_optimum_inside_orthant() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let x0 = DVector::from_vec(vec![0.5, 2.0]);
        let b = &a * &x0;
        let r = nnls(&a, &b, 20).unwrap();
        assert!((r.x - x0).norm() < 1e-12);
    }

    #[test]
    fn clamps_negative_direction() {
        let a = DMatrix::<f64>::identity(2, 2);
        let b = DVector::from_vec(vec![1.0, -3.0]);
        let r = nnls(&a, &b, 20).unwrap();
        assert_eq!(r.x, DVector::from_vec(vec![1.0, 0.0]));
        assert!(r.kkt_residual <= 1e-12);
    }

    #[test]
    fn min_norm_splits_symmetric_gauge() {
        // x1 + x2 = 2 has a line of minimizers; the min-norm one is (1, 1).
        let a = DMatrix::<f64>::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0]);
        let r = nnls_min_norm(&a, &b, 20).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-9 && (r.x[1] - 1.0).abs() < 1e-9, "{:?}", r.x);
    }

    #[test]
    fn budget_exhaustion_reports_divergence() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.0, 1.0, 0.3, 0.2, 0.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        assert!(matches!(nnls(&a, &b, 1), Err(Error::SolverDiverged { .. })));
    }
}
