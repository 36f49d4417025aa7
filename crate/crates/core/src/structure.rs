//! Latent-group discovery: rank selection, quartet similarity and single-linkage clustering.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;
use crate::model::{sample_covariance, CovarianceMatrix, LatentStructure, ScoreMatrix};
use crate::scalar::Real;

/// Eigenvalue ratio below which no gap separates latent variance from noise.
pub const DEFAULT_GAP_THRESHOLD: f64 = 3.0;

const EIG_FLOOR: f64 = 1e-12;
const FLAT_TOL: f64 = 1e-9;

/// How the number of latent models was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    /// Position of the largest ratio `λ_k / λ_{k+1}`.
    LargestRatioGap,
    /// No ratio reached the gap threshold: every predictor is its own latent model.
    NoGap,
    /// All eigenvalues equal; `k = 1` by first-index tie-break.
    FlatSpectrum,
    UserOverride,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport<T> {
    pub eigenvalues: Vec<T>,
    pub explained_variance_ratio: Vec<T>,
    /// Ratios `λ_k / λ_{k+1}` for `k = 1..M-1` with eigenvalues floored at 1e-12.
    pub gap_ratios: Vec<T>,
    pub selected_k: usize,
    pub selection_rule: SelectionRule,
}

/// Selects the number of latent models with the default gap threshold.
pub fn select_rank<T: Real>(cov: &CovarianceMatrix<T>, k_override: Option<usize>) -> Result<SpectrumReport<T>> {
    select_rank_with(cov, k_override, T::lit(DEFAULT_GAP_THRESHOLD))
}

/// Selects the number of latent models from the covariance spectrum.
///
/// Without an override the largest ratio `λ_k / λ_{k+1}` wins. A perfectly flat spectrum gives
/// `k = 1`; a spectrum whose largest ratio stays below `gap_threshold` gives `k = M`.
pub fn select_rank_with<T: Real>(
    cov: &CovarianceMatrix<T>,
    k_override: Option<usize>,
    gap_threshold: T,
) -> Result<SpectrumReport<T>> {
    let m = cov.dim();
    let r = cov.entries();
    for i in 0..m {
        for j in 0..i {
            if r[(i, j)] != r[(j, i)] && (r[(i, j)] - r[(j, i)]).abs() > T::lit(1e-12) {
                return Err(Error::NotSymmetric);
            }
        }
    }
    if let Some(k) = k_override {
        if k == 0 || k > m {
            return Err(Error::InvalidK { k, m });
        }
    }
    let (eigenvalues, _) = sym_eigen_desc(r).map_err(|e| match e {
        Error::EigenFailure => Error::NonFiniteSpectrum,
        other => other,
    })?;
    let total = eigenvalues.iter().fold(T::zero(), |a, &x| a + x);
    let explained_variance_ratio = eigenvalues.iter().map(|&x| x / total).collect();
    let floor = T::lit(EIG_FLOOR);
    let gap_ratios: Vec<T> = eigenvalues.windows(2).map(|w| w[0].max(floor) / w[1].max(floor)).collect();

    let (selected_k, selection_rule) = match k_override {
        Some(k) => (k, SelectionRule::UserOverride),
        None if m == 1 => (1, SelectionRule::FlatSpectrum),
        None => {
            let mut best = 0;
            for (idx, &g) in gap_ratios.iter().enumerate() {
                if g > gap_ratios[best] {
                    best = idx;
                }
            }
            let top = gap_ratios[best];
            if top <= T::one() + T::lit(FLAT_TOL) {
                log::warn!("flat covariance spectrum; selecting k = 1");
                (1, SelectionRule::FlatSpectrum)
            } else if top < gap_threshold {
                (m, SelectionRule::NoGap)
            } else {
                (best + 1, SelectionRule::LargestRatioGap)
            }
        }
    };
    Ok(SpectrumReport { eigenvalues, explained_variance_ratio, gap_ratios, selected_k, selection_rule })
}

/// Determinant `r_ij r_kl - r_il r_kj` of the 2×2 submatrix with rows `{i, k}` and columns `{j, l}`.
pub fn quartet<T: Real>(cov: &CovarianceMatrix<T>, i: usize, j: usize, k: usize, l: usize) -> Result<T> {
    let m = cov.dim();
    let idx = [i, j, k, l];
    if let Some(&bad) = idx.iter().find(|&&x| x >= m) {
        return Err(Error::InvalidShape(format!("index {bad} outside 0..{m}")));
    }
    for a in 0..4 {
        for b in (a + 1)..4 {
            if idx[a] == idx[b] {
                return Err(Error::IndexCollision);
            }
        }
    }
    Ok(cov.get(i, j) * cov.get(k, l) - cov.get(i, l) * cov.get(k, j))
}

/// Pairwise quartet similarity with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct QuartetSimilarity<T: Real> {
    s: DMatrix<T>,
}

impl<T: Real> QuartetSimilarity<T> {
    /// Wraps a symmetric matrix, zeroing its diagonal.
    pub fn from_matrix(mut s: DMatrix<T>) -> Result<Self> {
        if !s.is_square() {
            return Err(Error::InvalidShape("similarity must be square".into()));
        }
        let m = s.nrows();
        for i in 0..m {
            s[(i, i)] = T::zero();
            for j in 0..i {
                if (s[(i, j)] - s[(j, i)]).abs() > T::lit(1e-10) * s[(i, j)].abs().max(T::one()) {
                    return Err(Error::NotSymmetric);
                }
            }
        }
        Ok(Self { s })
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.s
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.s[(i, j)]
    }
}

/// Sums all quartets of each predictor pair over unordered pairs of the remaining predictors.
///
/// Evaluated in O(M³) through row sums and `R²` instead of direct enumeration; the summation
/// order is fixed, so results are reproducible bit for bit.
pub fn similarity_matrix<T: Real>(cov: &CovarianceMatrix<T>) -> Result<QuartetSimilarity<T>> {
    let m = cov.dim();
    if m < 4 {
        return Err(Error::TooFewPredictors { needed: 4, found: m });
    }
    let r = cov.entries();
    let row_off: Vec<T> = (0..m)
        .map(|i| (0..m).filter(|&l| l != i).fold(T::zero(), |a, l| a + r[(i, l)]))
        .collect();
    let total_off = row_off.iter().fold(T::zero(), |a, &x| a + x);
    let r2 = r * r;
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let mut s = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let rij = r[(i, j)];
            // Sum of r_kl over ordered k != l, both outside {i, j}.
            let t_o = total_off - two * row_off[i] - two * row_off[j] + two * rij;
            let a = row_off[i] - rij;
            let b = row_off[j] - rij;
            let c = r2[(i, j)] - r[(i, i)] * rij - rij * r[(j, j)];
            let v = half * (rij * t_o - (a * b - c));
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(QuartetSimilarity { s })
}

/// Single-linkage agglomerative clustering on `max(s) - s`, cut at exactly `k` clusters.
///
/// Ties merge the pair of clusters with the smallest minimum member indices first. Groups are
/// numbered by their smallest member.
pub fn cluster_predictors<T: Real>(sim: &QuartetSimilarity<T>, k: usize) -> Result<LatentStructure> {
    let m = sim.dim();
    if k == 0 || k > m {
        return Err(Error::InvalidK { k, m });
    }
    let mut smax = None::<T>;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                let v = sim.get(i, j);
                smax = Some(smax.map_or(v, |s: T| s.max(v)));
            }
        }
    }
    let smax = smax.unwrap_or_else(T::zero);
    // Cluster-level single-linkage distances, indexed by each cluster's representative
    // (its minimum member).
    let mut dist = DMatrix::from_fn(m, m, |i, j| smax - sim.get(i, j));
    let mut alive = vec![true; m];
    let mut owner: Vec<usize> = (0..m).collect();
    let mut clusters = m;
    while clusters > k {
        let mut best: Option<(T, usize, usize)> = None;
        for a in 0..m {
            if !alive[a] {
                continue;
            }
            for b in (a + 1)..m {
                if !alive[b] {
                    continue;
                }
                let d = dist[(a, b)];
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("at least two clusters alive");
        alive[b] = false;
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }
        for c in 0..m {
            if alive[c] && c != a {
                let d = dist[(a, c)].min(dist[(b, c)]);
                dist[(a, c)] = d;
                dist[(c, a)] = d;
            }
        }
        clusters -= 1;
    }
    // `owner` uses representative indices; compress to 0..k in smallest-member order.
    let mut map = vec![usize::MAX; m];
    let mut next = 0;
    let assignment: Vec<usize> = owner
        .iter()
        .map(|&o| {
            if map[o] == usize::MAX {
                map[o] = next;
                next += 1;
            }
            map[o]
        })
        .collect();
    LatentStructure::new(k, assignment)
}

/// Similarity-gap bounds for a structure with `k` equally sized groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapDiagnostic {
    pub theta_lb: f64,
    pub delta_lb: f64,
    pub same_group_lower: f64,
    pub cross_group_upper: f64,
    pub separated: bool,
    /// Whether `δ² θ (K - 2) >= 20` holds.
    pub sufficient_condition: bool,
}

/// Lower bound on same-group similarity versus upper bound on cross-group similarity.
/// The bounds assume balanced classes.
pub fn gap_diagnostic(theta: f64, delta: f64, m: usize, k: usize) -> Result<GapDiagnostic> {
    if k < 3 {
        return Err(Error::KTooSmall(k));
    }
    let (mf, kf) = (m as f64, k as f64);
    let same_group_lower = 0.25 * theta * delta * delta * mf * mf * (1.0 - 3.0 / kf + 2.0 / (kf * kf));
    let cross_group_upper = mf * mf / kf * (5.0 - 6.0 / kf);
    Ok(GapDiagnostic {
        theta_lb: theta,
        delta_lb: delta,
        same_group_lower,
        cross_group_upper,
        separated: same_group_lower > cross_group_upper,
        sufficient_condition: delta * delta * theta * (kf - 2.0) >= 20.0,
    })
}

/// Output of [`discover`].
#[derive(Debug, Clone)]
pub struct Discovery<T: Real> {
    pub structure: LatentStructure,
    pub spectrum: SpectrumReport<T>,
    /// Absent when fewer than four predictors make the similarity undefined.
    pub similarity: Option<QuartetSimilarity<T>>,
    pub covariance: CovarianceMatrix<T>,
}

/// Standardize, estimate covariance, select `k`, build similarities and cluster.
pub fn discover<T: Real>(scores: &ScoreMatrix<T>, k_override: Option<usize>) -> Result<Discovery<T>> {
    let z = scores.ensure_standardized()?;
    let covariance = sample_covariance(&z)?;
    discover_from_covariance(covariance, k_override)
}

/// [`discover`] starting from a covariance matrix.
pub fn discover_from_covariance<T: Real>(
    covariance: CovarianceMatrix<T>,
    k_override: Option<usize>,
) -> Result<Discovery<T>> {
    let m = covariance.dim();
    let spectrum = select_rank(&covariance, k_override)?;
    let k = spectrum.selected_k;
    let similarity = if m >= 4 { Some(similarity_matrix(&covariance)?) } else { None };
    let structure = match &similarity {
        Some(sim) => cluster_predictors(sim, k)?,
        None if k == m => LatentStructure::singletons(m)?,
        None if k == 1 => LatentStructure::new(1, vec![0; m])?,
        None => return Err(Error::TooFewPredictors { needed: 4, found: m }),
    };
    Ok(Discovery { structure, spectrum, similarity, covariance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{structured_covariance, MixtureParams, SuelParams};

    fn cov(m: DMatrix<f64>) -> CovarianceMatrix<f64> {
        CovarianceMatrix::new(m, None).unwrap()
    }

    fn diag_cov(vals: &[f64]) -> CovarianceMatrix<f64> {
        cov(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(vals)))
    }

    fn two_group_cov() -> CovarianceMatrix<f64> {
        structured_covariance(&SuelParams {
            pi: 0.5,
            b: vec![0.6, 0.5, 0.7, 0.4],
            latent: vec![MixtureParams::new(-1.0, 1.0, 0.8).unwrap(), MixtureParams::new(-0.8, 0.8, 0.8).unwrap()],
            theta: vec![0.5; 4],
            structure: LatentStructure::from_sizes(&[2, 2]).unwrap(),
        })
        .unwrap()
    }

    fn brute_similarity(c: &CovarianceMatrix<f64>) -> DMatrix<f64> {
        let m = c.dim();
        let mut s = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                let mut acc = 0.0;
                for k in 0..m {
                    for l in (k + 1)..m {
                        if [i, j].contains(&k) || [i, j].contains(&l) {
                            continue;
                        }
                        acc += 0.5 * (quartet(c, i, j, k, l).unwrap() + quartet(c, i, j, l, k).unwrap());
                    }
                }
                s[(i, j)] = acc;
            }
        }
        (&s + s.transpose()) * 0.5
    }

    #[test]
    fn gap_rule_example() {
        let r = select_rank(&diag_cov(&[4.0, 3.0, 2.5, 0.3, 0.25, 0.2]), None).unwrap();
        assert_eq!(r.selected_k, 3);
        assert_eq!(r.selection_rule, SelectionRule::LargestRatioGap);
        let total: f64 = r.explained_variance_ratio.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_spectrum_picks_one() {
        let r = select_rank(&diag_cov(&[1.0; 5]), None).unwrap();
        assert_eq!((r.selected_k, r.selection_rule), (1, SelectionRule::FlatSpectrum));
    }

    #[test]
    fn weak_gap_means_independent() {
        let r = select_rank(&diag_cov(&[1.4, 1.2, 1.0, 0.9, 0.8]), None).unwrap();
        assert_eq!((r.selected_k, r.selection_rule), (5, SelectionRule::NoGap));
    }

    #[test]
    fn override_wins_and_is_checked() {
        let c = diag_cov(&[4.0, 3.0, 2.5, 0.3]);
        assert_eq!(select_rank(&c, Some(2)).unwrap().selected_k, 2);
        assert_eq!(select_rank(&c, Some(5)).unwrap_err(), Error::InvalidK { k: 5, m: 4 });
        assert_eq!(select_rank(&c, Some(0)).unwrap_err(), Error::InvalidK { k: 0, m: 4 });
    }

    #[test]
    fn quartet_two_group_example() {
        let q = quartet(&two_group_cov(), 0, 1, 2, 3).unwrap();
        assert!((q - (0.192 * 0.1792 - 0.192 * 0.28)).abs() < 1e-15);
        assert!((q + 0.0193536).abs() < 1e-12);
        assert_eq!(quartet(&two_group_cov(), 0, 1, 1, 3).unwrap_err(), Error::IndexCollision);
    }

    #[test]
    fn similarity_matches_enumeration() {
        let c = two_group_cov();
        let s = similarity_matrix(&c).unwrap();
        let brute = brute_similarity(&c);
        for i in 0..4 {
            for j in 0..4 {
                assert!((s.get(i, j) - brute[(i, j)]).abs() < 1e-14);
            }
        }
        // With M = 4 the only contributing pair for (1,2) is {3,4}.
        let expected = 0.5 * (quartet(&c, 0, 1, 2, 3).unwrap() + quartet(&c, 0, 1, 3, 2).unwrap());
        assert!((s.get(0, 1) - expected).abs() < 1e-15);
    }

    #[test]
    fn similarity_vanishes_for_rank_one() {
        let v = [0.9, 0.3, 0.5, 0.7, 0.2, 0.6];
        let c = cov(DMatrix::from_fn(6, 6, |i, j| if i == j { 1.0 } else { v[i] * v[j] }));
        let s = similarity_matrix(&c).unwrap();
        assert!(s.matrix().abs().max() < 1e-10);
    }

    #[test]
    fn similarity_needs_four() {
        assert_eq!(
            similarity_matrix(&diag_cov(&[1.0, 1.0, 1.0])).unwrap_err(),
            Error::TooFewPredictors { needed: 4, found: 3 }
        );
    }

    #[test]
    fn single_linkage_blocks() {
        let s = DMatrix::from_row_slice(
            4,
            4,
            &[0.0, 9.0, 1.0, 1.0, 9.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 8.0, 1.0, 1.0, 8.0, 0.0],
        );
        let sim = QuartetSimilarity::from_matrix(s).unwrap();
        assert_eq!(cluster_predictors(&sim, 2).unwrap().assignment(), &[0, 0, 1, 1]);
        assert_eq!(cluster_predictors(&sim, 4).unwrap().assignment(), &[0, 1, 2, 3]);
        assert_eq!(cluster_predictors(&sim, 1).unwrap().assignment(), &[0, 0, 0, 0]);
        assert_eq!(cluster_predictors(&sim, 5).unwrap_err(), Error::InvalidK { k: 5, m: 4 });
    }

    #[test]
    fn single_linkage_ties_merge_smallest_first() {
        let sim = QuartetSimilarity::from_matrix(DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 })).unwrap();
        assert_eq!(cluster_predictors(&sim, 3).unwrap().assignment(), &[0, 0, 1, 2]);
        assert_eq!(cluster_predictors(&sim, 2).unwrap().assignment(), &[0, 0, 0, 1]);
    }

    #[test]
    fn gap_examples() {
        let d = gap_diagnostic(1.0, 1.0, 20, 4).unwrap();
        assert!((d.same_group_lower - 37.5).abs() < 1e-12);
        assert!((d.cross_group_upper - 350.0).abs() < 1e-12);
        assert!(!d.separated);
        let d = gap_diagnostic(2.0, 3.0, 40, 10).unwrap();
        assert!((d.same_group_lower - 5184.0).abs() < 1e-9);
        assert!((d.cross_group_upper - 704.0).abs() < 1e-9);
        assert!(d.separated);
        assert_eq!(gap_diagnostic(1.0, 1.0, 10, 2).unwrap_err(), Error::KTooSmall(2));
    }

    #[test]
    fn gap_boundary_reports_condition() {
        let (theta, k) = (2.0, 6usize);
        let delta = (20.0 / (theta * (k as f64 - 2.0))).sqrt();
        let d = gap_diagnostic(theta, delta * (1.0 + 1e-12), 30, k).unwrap();
        assert!(d.sufficient_condition);
        assert!(d.separated);
        let below = gap_diagnostic(theta, delta * 0.9, 30, k).unwrap();
        assert!(!below.sufficient_condition);
    }
}
