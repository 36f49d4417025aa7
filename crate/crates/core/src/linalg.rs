//! Dense linear algebra helpers with deterministic ordering and signs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::{sign_pos, Real};

/// Eigenpairs of a symmetric matrix, eigenvalues nonincreasing.
///
/// Each eigenvector is oriented so that its largest-magnitude component is positive.
pub fn sym_eigen_desc<T: Real>(m: &DMatrix<T>) -> Result<(Vec<T>, DMatrix<T>)> {
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m.clone(), T::machine_eps(), 10_000).ok_or(Error::EigenFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values: Vec<T> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if values.iter().any(|v| !v.is_finite_val()) {
        return Err(Error::NonFiniteSpectrum);
    }
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).clone_owned();
        let mut pivot = 0;
        for r in 1..n {
            if v[r].abs() > v[pivot].abs() {
                pivot = r;
            }
        }
        if v[pivot] < T::zero() {
            v = -v;
        }
        vectors.set_column(c, &v);
    }
    if vectors.iter().any(|v| !v.is_finite_val()) {
        return Err(Error::NonFiniteSpectrum);
    }
    Ok((values, vectors))
}

/// Thin SVD `m = U diag(s) Vᵀ` with singular values in descending order.
///
/// One-sided Jacobi rotations; wide inputs are factored through their transpose. Columns of
/// `U` belonging to zero singular values are completed to an orthonormal set.
pub fn svd<T: Real>(m: &DMatrix<T>) -> Result<(DMatrix<T>, DVector<T>, DMatrix<T>)> {
    if m.iter().any(|x| !x.is_finite_val()) {
        return Err(Error::SvdFailure);
    }
    if m.nrows() < m.ncols() {
        let (u, s, vt) = jacobi_svd(&m.transpose())?;
        return Ok((vt.transpose(), s, u.transpose()));
    }
    jacobi_svd(m)
}

fn jacobi_svd<T: Real>(m: &DMatrix<T>) -> Result<(DMatrix<T>, DVector<T>, DMatrix<T>)> {
    const MAX_SWEEPS: usize = 100;
    let (rows, n) = m.shape();
    let mut a = m.clone();
    let mut v = DMatrix::<T>::identity(n, n);
    let eps = T::machine_eps();
    // Columns reduced to rounding noise are treated as zero.
    let negligible = (eps * m.norm()).powi(2);
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if alpha <= negligible || beta <= negligible || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = sign_pos(zeta) / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut a, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdFailure);
    }
    let norms: Vec<T> = (0..n).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap_or(std::cmp::Ordering::Equal));
    let smax = norms.iter().fold(T::zero(), |acc, &x| acc.max(x));
    let floor = smax * eps * T::from_usize_lossy(rows.max(n));
    let mut u = DMatrix::<T>::zeros(rows, n);
    let mut sv = DVector::<T>::zeros(n);
    let mut vt = DMatrix::<T>::zeros(n, n);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        sv[dst] = norms[src];
        vt.row_mut(dst).copy_from(&v.column(src).transpose());
        if norms[src] > floor && norms[src] > T::zero() {
            u.set_column(dst, &(a.column(src) / norms[src]));
        } else {
            missing.push(dst);
        }
    }
    complete_orthonormal(&mut u, &missing);
    Ok((u, sv, vt))
}

fn rotate_columns<T: Real>(a: &mut DMatrix<T>, p: usize, q: usize, c: T, s: T) {
    for r in 0..a.nrows() {
        let (x, y) = (a[(r, p)], a[(r, q)]);
        a[(r, p)] = c * x - s * y;
        a[(r, q)] = s * x + c * y;
    }
}

/// Fills the listed columns with unit vectors orthogonal to every other column.
fn complete_orthonormal<T: Real>(u: &mut DMatrix<T>, missing: &[usize]) {
    let rows = u.nrows();
    let mut filled: Vec<bool> = (0..u.ncols()).map(|j| !missing.contains(&j)).collect();
    for &dst in missing {
        let mut best: Option<DVector<T>> = None;
        for e in 0..rows {
            let mut cand = DVector::<T>::zeros(rows);
            cand[e] = T::one();
            for _ in 0..2 {
                for j in (0..u.ncols()).filter(|&j| filled[j]) {
                    let proj = u.column(j).dot(&cand);
                    cand -= u.column(j) * proj;
                }
            }
            let norm = cand.norm();
            if best.as_ref().is_none_or(|b| norm > b.norm()) {
                best = Some(cand);
            }
        }
        if let Some(b) = best {
            let norm = b.norm();
            if norm > T::zero() {
                u.set_column(dst, &(b / norm));
            }
        }
        filled[dst] = true;
    }
}

/// Minimum-norm least-squares solution of `a x ≈ b` via the pseudo-inverse.
pub fn lstsq_min_norm<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> Result<DVector<T>> {
    let (u, s, vt) = svd(a)?;
    let smax = s.iter().fold(T::zero(), |acc, &x| acc.max(x));
    let cut = smax * T::machine_eps() * T::from_usize_lossy(a.nrows().max(a.ncols())) * T::lit(10.0);
    let utb = u.transpose() * b;
    let mut y = DVector::zeros(s.len());
    for i in 0..s.len() {
        if s[i] > cut {
            y[i] = utb[i] / s[i];
        }
    }
    Ok(vt.transpose() * y)
}

/// Settings for [`rank_one_offdiag`].
#[derive(Debug, Clone, Copy)]
pub struct RankOneOptions<T> {
    pub tol: T,
    pub max_iter: usize,
}

/// Fits `m_ij ≈ v_i v_j` over entries with `mask(i, j)` true (never the diagonal), which
/// must be symmetric. `cap[i]`, when given, bounds `|v_i|`.
///
/// Damped Gauss–Newton from the leading eigenpair of the masked matrix. Every step treats
/// all coordinates alike, so the result is equivariant to a relabeling of the indices.
/// Returns the fitted vector and the number of iterations used.
pub fn rank_one_offdiag<T: Real>(
    m: &DMatrix<T>,
    mask: &dyn Fn(usize, usize) -> bool,
    cap: Option<&[T]>,
    opts: RankOneOptions<T>,
) -> Result<(Vec<T>, usize)> {
    let n = m.nrows();
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).filter(|&(i, j)| mask(i, j)).collect();
    if pairs.is_empty() {
        return Ok((vec![T::zero(); n], 0));
    }
    let clip = |v: &mut [T]| {
        if let Some(c) = cap {
            for k in 0..n {
                v[k] = v[k].max(-c[k]).min(c[k]);
            }
        }
    };
    let masked = DMatrix::from_fn(n, n, |i, j| if i != j && mask(i, j) { m[(i, j)] } else { T::zero() });
    let (vals, vecs) = sym_eigen_desc(&masked)?;
    let mut v: Vec<T> = if vals[0] > T::zero() {
        let s = vals[0].sqrt();
        vecs.column(0).iter().map(|&x| x * s).collect()
    } else {
        let mean = pairs.iter().fold(T::zero(), |acc, &(i, j)| acc + m[(i, j)].abs())
            / T::from_usize_lossy(pairs.len());
        vec![mean.sqrt().max(T::lit(1e-6)); n]
    };
    clip(&mut v);
    let objective = |v: &[T]| pairs.iter().fold(T::zero(), |acc, &(i, j)| acc + (m[(i, j)] - v[i] * v[j]).powi(2));
    let mut current = objective(&v);
    let mut damping = T::lit(1e-3);
    for iter in 1..=opts.max_iter {
        let mut jtj = DMatrix::<T>::zeros(n, n);
        let mut jtr = DVector::<T>::zeros(n);
        for &(i, j) in &pairs {
            let r = m[(i, j)] - v[i] * v[j];
            jtr[i] += v[j] * r;
            jtr[j] += v[i] * r;
            jtj[(i, i)] += v[j] * v[j];
            jtj[(j, j)] += v[i] * v[i];
            jtj[(i, j)] += v[i] * v[j];
            jtj[(j, i)] += v[i] * v[j];
        }
        // Coordinates held at a bound by the descent direction stay fixed for this step.
        let pinned: Vec<bool> = (0..n)
            .map(|k| match cap {
                Some(c) => (v[k] >= c[k] && jtr[k] >= T::zero()) || (v[k] <= -c[k] && jtr[k] <= T::zero()),
                None => false,
            })
            .collect();
        for k in (0..n).filter(|&k| pinned[k]) {
            for d in 0..n {
                jtj[(k, d)] = T::zero();
                jtj[(d, k)] = T::zero();
            }
            jtr[k] = T::zero();
        }
        let mut accepted = false;
        while damping < T::lit(1e12) {
            let mut sys = jtj.clone();
            for d in 0..n {
                sys[(d, d)] += damping * (T::one() + jtj[(d, d)]);
            }
            let Some(chol) = sys.cholesky() else {
                damping *= T::lit(4.0);
                continue;
            };
            let delta = chol.solve(&jtr);
            let mut trial: Vec<T> = (0..n).map(|k| v[k] + delta[k]).collect();
            clip(&mut trial);
            let value = objective(&trial);
            if value <= current {
                let change = (0..n).fold(T::zero(), |acc, k| acc.max((trial[k] - v[k]).abs()));
                let scale = trial.iter().fold(T::zero(), |acc, x| acc.max(x.abs()));
                v = trial;
                current = value;
                damping = (damping / T::lit(3.0)).max(T::lit(1e-12));
                if change <= opts.tol * scale.max(T::one()) {
                    return Ok((v, iter));
                }
                accepted = true;
                break;
            }
            damping *= T::lit(4.0);
        }
        if !accepted {
            // No descent left at working precision: v is stationary.
            return Ok((v, iter));
        }
    }
    Err(Error::NonConvergence { iterations: opts.max_iter })
}

/// Flips the sign of `v` so that more entries are positive than negative; ties go to the
/// orientation with a positive sum. Returns `true` when the vote was tied.
pub fn orient_majority_positive<T: Real>(v: &mut [T]) -> bool {
    let pos = v.iter().filter(|&&x| x > T::zero()).count();
    let neg = v.iter().filter(|&&x| x < T::zero()).count();
    let tied = pos == neg;
    let flip = if tied {
        v.iter().fold(T::zero(), |a, &x| a + x) < T::zero()
    } else {
        neg > pos
    };
    if flip {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
    tied
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_svd(m: &DMatrix<f64>) {
        let (u, s, vt) = svd(m).unwrap();
        let k = s.len();
        assert_eq!(k, m.nrows().min(m.ncols()));
        assert!((&u * DMatrix::from_diagonal(&s) * &vt - m).amax() < 1e-12);
        assert!((u.transpose() * &u - DMatrix::identity(k, k)).amax() < 1e-12);
        assert!((&vt * vt.transpose() - DMatrix::identity(k, k)).amax() < 1e-12);
        assert!(s.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn svd_handles_ill_scaled_rank_deficient_input() {
        // 0/1 design stacked on a tiny ridge, plus all-zero rows.
        let top = [[0, 1, 1, 0, 0, 1], [1, 1, 0, 1, 0, 0], [1, 1, 0, 0, 1, 0], [1, 0, 1, 1, 0, 0], [1, 0, 1, 0, 1, 0]];
        let mut m = DMatrix::<f64>::zeros(12, 6);
        for i in 0..5 {
            for j in 0..6 {
                m[(i, j)] = top[i][j] as f64;
            }
        }
        for j in 0..4 {
            m[(5 + j, j)] = 1e-5;
        }
        check_svd(&m);
        check_svd(&m.transpose());
        check_svd(&DMatrix::<f64>::zeros(3, 3));
        check_svd(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
    }

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::<f64>::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 0.0, 0.0, 0.0, 5.0]);
        let (vals, vecs) = sym_eigen_desc(&m).unwrap();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        for c in 0..3 {
            let v = vecs.column(c);
            let r = &m * v - v * vals[c];
            assert!(r.norm() < 1e-12);
        }
        assert!((vals[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn lstsq_picks_min_norm() {
        let a = DMatrix::<f64>::from_row_slice(1, 2, &[1.0, 1.0]);
        let x = lstsq_min_norm(&a, &DVector::from_vec(vec![2.0])).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_recovers_outer_product() {
        let v = [0.9f64, 0.4, -0.7, 0.2, 0.5];
        let m = DMatrix::from_fn(5, 5, |i, j| if i == j { 1.0 } else { v[i] * v[j] });
        let (fit, _) = rank_one_offdiag(&m, &|_, _| true, None, RankOneOptions { tol: 1e-14, max_iter: 10_000 }).unwrap();
        let s = if fit[0] > 0.0 { 1.0 } else { -1.0 };
        for i in 0..5 {
            assert!((s * fit[i] - v[i]).abs() < 1e-8, "{fit:?}");
        }
    }

    #[test]
    fn majority_orientation() {
        let mut v = vec![-1.0, -2.0, 3.0];
        assert!(!orient_majority_positive(&mut v));
        assert_eq!(v, vec![1.0, 2.0, -3.0]);
        let mut t = vec![-1.0, 3.0];
        assert!(orient_majority_positive(&mut t));
        assert_eq!(t, vec![-1.0, 3.0]);
    }
}
