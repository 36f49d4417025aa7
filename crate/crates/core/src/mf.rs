//! Structured low-rank factorization `R ≈ B U V (B U)ᵀ + Θ` fitted by block coordinate descent.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{orient_majority_positive, rank_one_offdiag, svd, sym_eigen_desc, RankOneOptions};
use crate::model::{sample_covariance, CovarianceMatrix, LatentStructure, ScoreMatrix, WeightScale, WeightVector};
use crate::scalar::{sign_pos, Real};

#[derive(Debug, Clone, Copy)]
pub struct BcdOptions<T> {
    pub max_iter: usize,
    /// Stop when the relative objective change falls to this value.
    pub tol: T,
    /// Initial value of every noise variance.
    pub theta0: T,
    /// Maximum alternations between the loading and rotation updates within a sweep.
    pub inner_iter: usize,
}

impl<T: Real> Default for BcdOptions<T> {
    fn default() -> Self {
        Self { max_iter: 200, tol: T::lit(1e-8), theta0: T::lit(0.5), inner_iter: 50 }
    }
}

/// Fitted factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorState<T: Real> {
    /// M×K loadings, nonzero only inside each predictor's group column.
    pub b_mat: DMatrix<T>,
    /// K×K orthogonal rotation.
    pub u: DMatrix<T>,
    /// Leading eigenvalues of `R − Θ`, clipped at 0.
    pub v: DVector<T>,
    pub theta_diag: DVector<T>,
    pub iterations: usize,
    pub objective: T,
    pub objective_trace: Vec<T>,
    /// False when `max_iter` sweeps ran out before the tolerance was met.
    pub converged: bool,
}

impl<T: Real> FactorState<T> {
    /// Low-rank part `B U V (B U)ᵀ`.
    pub fn low_rank(&self) -> DMatrix<T> {
        let bu = &self.b_mat * &self.u;
        &bu * DMatrix::from_diagonal(&self.v) * bu.transpose()
    }

    /// Latent covariance `Λ = U V Uᵀ`.
    pub fn lambda(&self) -> DMatrix<T> {
        &self.u * DMatrix::from_diagonal(&self.v) * self.u.transpose()
    }
}

/// Nearest orthogonal matrix to `s`: `D Fᵀ` from `s = D Σ Fᵀ`.
pub fn procrustes<T: Real>(s: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !s.is_square() {
        return Err(Error::InvalidShape("procrustes input must be square".into()));
    }
    if s.iter().any(|x| !x.is_finite_val()) {
        return Err(Error::SvdFailure);
    }
    if s.nrows() == 1 {
        return Ok(DMatrix::from_element(1, 1, sign_pos(s[(0, 0)])));
    }
    let (d, _, ft) = svd(s)?;
    Ok(d * ft)
}

fn objective<T: Real>(r: &DMatrix<T>, theta: &DVector<T>, low: &DMatrix<T>) -> T {
    let resid = r - DMatrix::from_diagonal(theta) - low;
    resid.norm_squared()
}

/// Block coordinate descent. A sweep that would raise the objective is rejected and ends the
/// fit with the previous state.
pub fn bcd_fit<T: Real>(
    cov: &CovarianceMatrix<T>,
    structure: &LatentStructure,
    opts: BcdOptions<T>,
) -> Result<FactorState<T>> {
    let m = cov.dim();
    if structure.n_predictors() != m {
        return Err(Error::LengthMismatch { expected: m, found: structure.n_predictors() });
    }
    let k = structure.k();
    let r = cov.entries();
    let mask: DMatrix<T> = structure.mask();
    let ortho_tol = T::tol(1e-8);

    let mut b = mask.clone();
    let mut u = DMatrix::<T>::identity(k, k);
    let mut theta = DVector::from_element(m, opts.theta0);
    let mut v = DVector::zeros(k);
    let mut trace: Vec<T> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..opts.max_iter {
        let (vals, vecs) = sym_eigen_desc(&(r - DMatrix::from_diagonal(&theta)))?;
        let mut w = vecs.columns(0, k).clone_owned();
        let v_new = DVector::from_iterator(k, vals.iter().take(k).map(|&x| x.max(T::zero())));
        // Eigenvector signs are arbitrary; align them with the current factor.
        let prev_bu = &b * &u;
        for c in 0..k {
            if w.column(c).dot(&prev_bu.column(c)) < T::zero() {
                w.column_mut(c).neg_mut();
            }
        }

        let mut b_new = b.clone();
        let mut u_new = u.clone();
        for _ in 0..opts.inner_iter.max(1) {
            let b_old = b_new.clone();
            for i in 0..k {
                let u_row = u_new.row(i).transpose();
                let resid = &w - &b_new * &u_new + b_new.column(i) * u_new.row(i);
                let col = resid * u_row;
                for p in 0..m {
                    b_new[(p, i)] = if mask[(p, i)] == T::zero() { T::zero() } else { col[p] };
                }
            }
            u_new = procrustes(&(b_new.transpose() * &w))?;
            let dev = (u_new.transpose() * &u_new - DMatrix::identity(k, k)).norm();
            if dev > ortho_tol {
                return Err(Error::SvdFailure);
            }
            if (&b_new - &b_old).amax() < T::lit(1e-12) {
                break;
            }
        }

        let bu = &b_new * &u_new;
        let low = &bu * DMatrix::from_diagonal(&v_new) * bu.transpose();
        let mut clipped = 0;
        let theta_new = DVector::from_fn(m, |i, _| {
            let t = r[(i, i)] - low[(i, i)];
            if t < T::zero() {
                clipped += 1;
                T::zero()
            } else {
                t
            }
        });
        if clipped > 0 {
            log::debug!("{clipped} noise variances clipped at 0");
        }
        let obj = objective(r, &theta_new, &low);
        if let Some(&prev) = trace.last() {
            if obj > prev {
                converged = true;
                break;
            }
        }
        b = b_new;
        u = u_new;
        v = v_new;
        theta = theta_new;
        iterations += 1;
        let prev = trace.last().copied();
        trace.push(obj);
        if let Some(prev) = prev {
            if (prev - obj).abs() <= opts.tol * prev.max(T::lit(1e-300)) {
                converged = true;
                break;
            }
        }
        if obj <= T::lit(1e-30) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("matrix factorization stopped at max_iter = {}", opts.max_iter);
    }
    let objective = trace.last().copied().unwrap_or_else(T::zero);
    Ok(FactorState { b_mat: b, u, v, theta_diag: theta, iterations, objective, objective_trace: trace, converged })
}

/// Source of the class prior for absolute weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PiSource<T> {
    /// Only relative weights are produced.
    Relative,
    Fixed(T),
}

/// Weights and the latent quantities they were computed from.
#[derive(Debug, Clone)]
pub struct MfWeights<T: Real> {
    /// Relative weights `w̃`.
    pub weights: WeightVector<T>,
    /// Absolute weights when the prior was supplied.
    pub absolute: Option<WeightVector<T>>,
    pub b: Vec<T>,
    pub q: Vec<T>,
    pub degenerate: Vec<usize>,
}

/// Per-group cross-model scales `q` with `q_v q_u ≈ Λ_vu` and `|q_k| < sqrt(Λ_kk)`.
fn latent_scales<T: Real>(lambda: &DMatrix<T>) -> Result<Vec<T>> {
    let k = lambda.nrows();
    let diag_sd: Vec<T> = (0..k).map(|i| lambda[(i, i)].max(T::zero()).sqrt()).collect();
    match k {
        1 => {
            let (vals, vecs) = sym_eigen_desc(lambda)?;
            Ok(vec![vals[0].max(T::zero()).sqrt() * vecs[(0, 0)]])
        }
        2 => {
            // Only the product q1 q2 is identified; split it in proportion to the group scales.
            let denom = diag_sd[0] * diag_sd[1];
            if denom <= T::zero() {
                return Ok(vec![T::zero(); 2]);
            }
            let rho = (lambda[(0, 1)].abs() / denom).min(T::one()).sqrt();
            Ok(vec![rho * diag_sd[0], rho * diag_sd[1] * sign_pos(lambda[(0, 1)])])
        }
        _ => {
            let shrink = T::one() - T::lit(1e-6);
            let cap: Vec<T> = diag_sd.iter().map(|&s| s * shrink).collect();
            let (q, _) = rank_one_offdiag(
                lambda,
                &|_, _| true,
                Some(&cap),
                RankOneOptions { tol: T::lit(1e-12), max_iter: 10_000 },
            )?;
            Ok(q)
        }
    }
}

/// Weights `w̃_i = −b_i q_k / (1 − b_i² q_k²)`, oriented so that most are positive.
pub fn extract_weights<T: Real>(
    state: &FactorState<T>,
    structure: &LatentStructure,
    pi_source: PiSource<T>,
) -> Result<MfWeights<T>> {
    let m = state.b_mat.nrows();
    if structure.n_predictors() != m || structure.k() != state.b_mat.ncols() {
        return Err(Error::LengthMismatch { expected: m, found: structure.n_predictors() });
    }
    let b: Vec<T> = (0..m).map(|i| state.b_mat[(i, structure.group_of(i))]).collect();
    let q = latent_scales(&state.lambda())?;
    let limit = T::one() - T::lit(1e-9);
    let mut degenerate = Vec::new();
    let mut w: Vec<T> = (0..m)
        .map(|i| {
            let x = b[i] * q[structure.group_of(i)];
            if x.abs() >= limit {
                log::warn!("predictor {i}: |b q| = {x} too close to 1, weight set to 0");
                degenerate.push(i);
                T::zero()
            } else {
                -x / (T::one() - x * x)
            }
        })
        .collect();
    orient_majority_positive(&mut w);
    let absolute = match pi_source {
        PiSource::Relative => None,
        PiSource::Fixed(pi) => {
            if !(pi > T::zero() && pi < T::one()) {
                return Err(Error::InvalidParams(format!("pi {pi} outside (0, 1)")));
            }
            let scale = T::one() / (pi * (T::one() - pi)).sqrt();
            Some(WeightVector::new(w.iter().map(|&x| x * scale).collect(), WeightScale::Absolute)?)
        }
    };
    let weights = WeightVector::new(w, WeightScale::Relative)?;
    Ok(MfWeights { weights, absolute, b, q, degenerate })
}

/// Result of [`fit_mf`].
#[derive(Debug, Clone)]
pub struct MfFit<T: Real> {
    pub weights: WeightVector<T>,
    pub extracted: MfWeights<T>,
    pub state: FactorState<T>,
}

/// Full estimator from scores with default options.
pub fn fit_mf<T: Real>(scores: &ScoreMatrix<T>, structure: &LatentStructure) -> Result<MfFit<T>> {
    let z = scores.ensure_standardized()?;
    fit_mf_cov(&sample_covariance(&z)?, structure, BcdOptions::default(), PiSource::Relative)
}

/// Full estimator from a covariance matrix.
pub fn fit_mf_cov<T: Real>(
    cov: &CovarianceMatrix<T>,
    structure: &LatentStructure,
    opts: BcdOptions<T>,
    pi_source: PiSource<T>,
) -> Result<MfFit<T>> {
    let state = bcd_fit(cov, structure, opts)?;
    let extracted = extract_weights(&state, structure, pi_source)?;
    Ok(MfFit { weights: extracted.weights.clone(), extracted, state })
}
