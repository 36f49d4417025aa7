//! Log-linear constrained least-squares estimator of the structured model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    sample_covariance, structured_weight, CovarianceMatrix, LatentStructure, ScoreMatrix, WeightScale, WeightVector,
};
use crate::nnls::nnls_min_norm;
use crate::scalar::{sign_pos, Real};

/// Covariances with magnitude below this are dropped before taking logs.
pub const LOG_FLOOR: f64 = 1e-6;

/// One column of the design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unknown {
    /// `p = log((1 − π) / π)` up to sign.
    LogOdds,
    LogLoading(usize),
    LogWithinScale(usize),
    LogLatentMean(usize),
}

impl Unknown {
    /// Short label such as `d_3` (1-based).
    pub fn label(&self) -> String {
        match self {
            Unknown::LogOdds => "p".to_string(),
            Unknown::LogLoading(i) => format!("d_{}", i + 1),
            Unknown::LogWithinScale(k) => format!("s_{}", k + 1),
            Unknown::LogLatentMean(k) => format!("l_{}", k + 1),
        }
    }
}

/// `z ≈ A g` with 0/1 design `A` over unknowns `[p, d_1..d_M, s_1..s_K, l_1..l_K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLinearSystem<T: Real> {
    pub a: DMatrix<T>,
    pub z: DVector<T>,
    pub columns: Vec<Unknown>,
    /// Predictor pair behind each row.
    pub pairs: Vec<(usize, usize)>,
    /// Pairs excluded because `|r| < 1e-6`.
    pub dropped: Vec<(usize, usize)>,
    pub m: usize,
    pub k: usize,
}

impl<T: Real> LogLinearSystem<T> {
    pub fn n_unknowns(&self) -> usize {
        self.columns.len()
    }

    fn col_d(&self, i: usize) -> usize {
        1 + i
    }

    fn col_s(&self, k: usize) -> usize {
        1 + self.m + k
    }

    fn col_l(&self, k: usize) -> usize {
        1 + self.m + self.k + k
    }
}

/// Builds one equation per retained predictor pair.
pub fn assemble_system<T: Real>(cov: &CovarianceMatrix<T>, structure: &LatentStructure) -> Result<LogLinearSystem<T>> {
    let m = cov.dim();
    if structure.n_predictors() != m {
        return Err(Error::LengthMismatch { expected: m, found: structure.n_predictors() });
    }
    if m < 2 {
        return Err(Error::TooFewPredictors { needed: 2, found: m });
    }
    let k = structure.k();
    let mut columns = vec![Unknown::LogOdds];
    columns.extend((0..m).map(Unknown::LogLoading));
    columns.extend((0..k).map(Unknown::LogWithinScale));
    columns.extend((0..k).map(Unknown::LogLatentMean));
    let p = columns.len();

    let floor = T::lit(LOG_FLOOR);
    let mut rows: Vec<Vec<usize>> = Vec::new();
    let mut z = Vec::new();
    let mut pairs = Vec::new();
    let mut dropped = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            let r = cov.get(i, j).abs();
            if r < floor {
                dropped.push((i, j));
                continue;
            }
            let (gi, gj) = (structure.group_of(i), structure.group_of(j));
            let cols = if gi == gj {
                vec![1 + m + gi, 1 + i, 1 + j]
            } else {
                vec![0, 1 + i, 1 + j, 1 + m + k + gi, 1 + m + k + gj]
            };
            rows.push(cols);
            z.push(r.ln());
            pairs.push((i, j));
        }
    }
    if rows.is_empty() {
        return Err(Error::NoUsableEquations);
    }
    let mut a = DMatrix::zeros(rows.len(), p);
    for (r, cols) in rows.iter().enumerate() {
        for &c in cols {
            a[(r, c)] = T::one();
        }
    }
    Ok(LogLinearSystem { a, z: DVector::from_vec(z), columns, pairs, dropped, m, k })
}

/// Magnitude estimates from the sign-constrained fit.
#[derive(Debug, Clone, PartialEq)]
pub struct CqoSolution<T: Real> {
    /// Fitted unknowns, all `≤ 0`.
    pub g: DVector<T>,
    pub pi_hat: T,
    /// `|b_i| = e^{d_i}`.
    pub b_abs: Vec<T>,
    /// `|μ⁰_k| = e^{l_k}`.
    pub mu0_abs: Vec<T>,
    /// `e^{s_k}`, absent for groups without a within-group equation.
    pub within_scale: Vec<Option<T>>,
    /// `‖A g − z‖`.
    pub residual_norm: T,
    pub kkt_residual: T,
    pub iterations: usize,
}

/// Minimizes `‖A g − z‖²` over `g ≤ 0`, returning the minimum-norm minimizer.
pub fn solve_cqo<T: Real>(system: &LogLinearSystem<T>) -> Result<CqoSolution<T>> {
    let p = system.n_unknowns();
    if system.a.nrows() == 0 {
        return Err(Error::NoUsableEquations);
    }
    // g = −h with h ≥ 0 turns `A g ≈ z` into `A h ≈ −z`.
    let neg_z = -&system.z;
    let sol = nnls_min_norm(&system.a, &neg_z, 10 * p)?;
    let g = -&sol.x;
    let residual_norm = (&system.a * &g - &system.z).norm();
    let pi_hat = T::one() / (T::one() + g[0].exp());
    let b_abs = (0..system.m).map(|i| g[system.col_d(i)].exp()).collect();
    let mu0_abs = (0..system.k).map(|k| g[system.col_l(k)].exp()).collect();
    let within_scale = (0..system.k)
        .map(|k| {
            let c = system.col_s(k);
            let used = system.a.column(c).iter().any(|&x| x != T::zero());
            used.then(|| g[c].exp())
        })
        .collect();
    Ok(CqoSolution {
        g,
        pi_hat,
        b_abs,
        mu0_abs,
        within_scale,
        residual_norm,
        kkt_residual: sol.kkt_residual,
        iterations: sol.iterations,
    })
}

/// Signed parameters ready for the weight formula.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedParams<T: Real> {
    pub pi: T,
    pub b: Vec<T>,
    pub mu0: Vec<T>,
    /// A majority vote tied and was resolved toward positive.
    pub ambiguous: bool,
}

impl<T: Real> SignedParams<T> {
    /// Weight of each predictor; degenerate denominators contribute `None`.
    pub fn weights(&self, structure: &LatentStructure) -> Vec<Option<T>> {
        (0..self.b.len())
            .map(|i| structured_weight(self.pi, self.b[i], self.mu0[structure.group_of(i)]).ok())
            .collect()
    }
}

/// Attaches signs to the magnitudes from the sample covariance.
///
/// Loadings follow the sign of their correlation with the lowest-index member of their group.
/// Latent-mean signs are chosen by majority agreement with cross-group covariance signs, and
/// the overall orientation makes most weights positive.
pub fn recover_signs<T: Real>(
    cov: &CovarianceMatrix<T>,
    structure: &LatentStructure,
    sol: &CqoSolution<T>,
) -> Result<SignedParams<T>> {
    let m = cov.dim();
    if structure.n_predictors() != m || sol.b_abs.len() != m {
        return Err(Error::LengthMismatch { expected: m, found: sol.b_abs.len() });
    }
    let k = structure.k();
    let floor = T::lit(LOG_FLOOR);
    let mut ambiguous = false;
    let groups = structure.groups();

    let mut sb = vec![T::one(); m];
    for members in &groups {
        let anchor = members[0];
        for &i in &members[1..] {
            sb[i] = sign_pos(cov.get(i, anchor));
            if cov.get(i, anchor) == T::zero() {
                ambiguous = true;
            }
        }
    }

    // Agreement between group v's latent sign and group u's, summed over cross pairs.
    let mut pair_vote = DMatrix::<T>::zeros(k, k);
    for i in 0..m {
        for j in 0..m {
            let (gi, gj) = (structure.group_of(i), structure.group_of(j));
            if gi == gj || cov.get(i, j).abs() < floor {
                continue;
            }
            pair_vote[(gi, gj)] += sign_pos(cov.get(i, j)) * sb[i] * sb[j];
        }
    }
    let mut smu = vec![T::one(); k];
    let vote_for = |v: usize, smu: &[T], limit: usize| {
        (0..limit).filter(|&u| u != v).fold(T::zero(), |acc, u| acc + pair_vote[(v, u)] * smu[u])
    };
    for v in 1..k {
        let vote = vote_for(v, &smu, v);
        smu[v] = sign_pos(vote);
    }
    // Local refinement against all other groups until no sign changes.
    for _ in 0..(4 * k) {
        let mut changed = false;
        for v in 1..k {
            let vote = vote_for(v, &smu, k);
            if vote == T::zero() {
                continue;
            }
            let s = sign_pos(vote);
            if s != smu[v] {
                smu[v] = s;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    for v in 1..k {
        if vote_for(v, &smu, k) == T::zero() && (0..k).any(|u| u != v) {
            ambiguous = true;
        }
    }

    // Structured weights with signed μ⁰: a latent model with class-0 mean below the centre has negative μ⁰.
    let mut signed = SignedParams {
        pi: sol.pi_hat,
        b: (0..m).map(|i| sb[i] * sol.b_abs[i]).collect(),
        mu0: (0..k).map(|v| -smu[v] * sol.mu0_abs[v]).collect(),
        ambiguous,
    };
    let mut w: Vec<T> = signed.weights(structure).into_iter().map(|x| x.unwrap_or_else(T::zero)).collect();
    let before = w.clone();
    if crate::linalg::orient_majority_positive(&mut w) {
        log::warn!("weight sign vote tied; resolved toward a positive sum");
        signed.ambiguous = true;
    }
    if w != before {
        for mu in signed.mu0.iter_mut() {
            *mu = -*mu;
        }
    }
    Ok(signed)
}

/// Result of [`fit_cqo`].
#[derive(Debug, Clone)]
pub struct CqoFit<T: Real> {
    pub weights: WeightVector<T>,
    pub system: LogLinearSystem<T>,
    pub solution: CqoSolution<T>,
    pub signed: SignedParams<T>,
    /// Predictors whose weight was zeroed because of a degenerate denominator.
    pub degenerate: Vec<usize>,
}

/// Full estimator from scores.
pub fn fit_cqo<T: Real>(scores: &ScoreMatrix<T>, structure: &LatentStructure) -> Result<CqoFit<T>> {
    let z = scores.ensure_standardized()?;
    fit_cqo_cov(&sample_covariance(&z)?, structure)
}

/// Full estimator from a covariance matrix.
pub fn fit_cqo_cov<T: Real>(cov: &CovarianceMatrix<T>, structure: &LatentStructure) -> Result<CqoFit<T>> {
    let system = assemble_system(cov, structure)?;
    let solution = solve_cqo(&system)?;
    let signed = recover_signs(cov, structure, &solution)?;
    let mut degenerate = Vec::new();
    let w: Vec<T> = signed
        .weights(structure)
        .into_iter()
        .enumerate()
        .map(|(i, w)| {
            w.unwrap_or_else(|| {
                log::warn!("predictor {i}: degenerate weight denominator, weight set to 0");
                degenerate.push(i);
                T::zero()
            })
        })
        .collect();
    if degenerate.len() == w.len() {
        let value = (signed.pi - (T::one() - signed.pi) * signed.b[0].powi(2) * signed.mu0[structure.group_of(0)].powi(2))
            .as_f64();
        return Err(Error::DegenerateDenominator { value });
    }
    let weights = WeightVector::new(w, WeightScale::Absolute)?;
    Ok(CqoFit { weights, system, solution, signed, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{structured_covariance, MixtureParams, SuelParams};

    fn fixture(pi: f64) -> (CovarianceMatrix<f64>, LatentStructure) {
        let structure = LatentStructure::from_sizes(&[2, 2]).unwrap();
        let p = SuelParams {
            pi,
            b: vec![0.6, 0.5, 0.7, 0.4],
            latent: vec![MixtureParams::new(-1.0, 1.0, 0.8).unwrap(), MixtureParams::new(-0.8, 0.8, 0.8).unwrap()],
            theta: vec![0.5; 4],
            structure: structure.clone(),
        };
        (structured_covariance(&p).unwrap(), structure)
    }

    #[test]
    fn row_counts() {
        let (cov, st) = fixture(0.5);
        let sys = assemble_system(&cov, &st).unwrap();
        assert_eq!(sys.a.shape(), (6, 9));
        for r in 0..6 {
            let ones = sys.a.row(r).sum();
            let (i, j) = sys.pairs[r];
            let expected = if st.group_of(i) == st.group_of(j) { 3.0 } else { 5.0 };
            assert_eq!(ones, expected);
        }
        assert!((sys.z[0] - 0.192f64.ln()).abs() < 1e-12);
        assert!((sys.z[0] + 1.65026).abs() < 1e-5);
        assert_eq!(sys.columns[4].label(), "d_4");
        assert_eq!(sys.columns[6].label(), "s_2");
    }

    #[test]
    fn zero_entry_dropped() {
        let (cov, st) = fixture(0.5);
        let mut e = cov.entries().clone();
        e[(0, 3)] = 0.0;
        e[(3, 0)] = 0.0;
        let sys = assemble_system(&CovarianceMatrix::new(e, None).unwrap(), &st).unwrap();
        assert_eq!(sys.dropped, vec![(0, 3)]);
        assert_eq!(sys.a.nrows(), 5);
    }

    #[test]
    fn all_dropped_is_error() {
        let cov = CovarianceMatrix::new(DMatrix::<f64>::identity(3, 3), None).unwrap();
        let st = LatentStructure::singletons(3).unwrap();
        assert_eq!(assemble_system(&cov, &st).unwrap_err(), Error::NoUsableEquations);
    }

    #[test]
    fn exact_fixture_reconstructs_logs() {
        let (cov, st) = fixture(0.5);
        let sys = assemble_system(&cov, &st).unwrap();
        let sol = solve_cqo(&sys).unwrap();
        assert!(sol.residual_norm <= 1e-6, "{}", sol.residual_norm);
        assert!(sol.g.iter().all(|&x| x <= 0.0));
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn unit_correlations_give_even_prior() {
        let cov = CovarianceMatrix::new(DMatrix::<f64>::from_element(4, 4, 1.0), None).unwrap();
        let st = LatentStructure::from_sizes(&[2, 2]).unwrap();
        let sol = solve_cqo(&assemble_system(&cov, &st).unwrap()).unwrap();
        assert!(sol.g.amax() < 1e-12);
        assert!((sol.pi_hat - 0.5).abs() < 1e-12);
    }

    #[test]
    fn singleton_scale_absent() {
        let (cov, _) = fixture(0.5);
        let st = LatentStructure::new(3, vec![0, 0, 1, 2]).unwrap();
        let sol = solve_cqo(&assemble_system(&cov, &st).unwrap()).unwrap();
        assert!(sol.within_scale[0].is_some());
        assert_eq!(sol.within_scale[1], None);
    }

    #[test]
    fn positive_correlations_positive_weights() {
        let (cov, st) = fixture(0.5);
        let fit = fit_cqo_cov(&cov, &st).unwrap();
        assert!(fit.signed.b.iter().all(|&b| b > 0.0));
        assert!(fit.weights.as_slice().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn negative_pair_in_group_flips_sign() {
        let (cov, st) = fixture(0.5);
        let mut e = cov.entries().clone();
        for j in 0..4 {
            if j != 1 {
                e[(1, j)] = -e[(1, j)];
                e[(j, 1)] = -e[(j, 1)];
            }
        }
        let cov2 = CovarianceMatrix::new(e, None).unwrap();
        let base = fit_cqo_cov(&cov, &st).unwrap();
        let fit = fit_cqo_cov(&cov2, &st).unwrap();
        assert!(fit.signed.b[0] > 0.0 && fit.signed.b[1] < 0.0);
        for i in 0..4 {
            let expected = if i == 1 { -base.weights.as_slice()[i] } else { base.weights.as_slice()[i] };
            assert!((fit.weights.as_slice()[i] - expected).abs() < 1e-9);
        }
    }
}
