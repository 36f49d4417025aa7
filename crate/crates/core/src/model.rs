//! Domain types, standardization, covariance and the closed-form weight formulas.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

const STD_TOL: f64 = 1e-9;
const SYM_TOL: f64 = 1e-12;

/// N×M matrix of predictor scores (rows are samples, columns predictors).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix<T: Real> {
    values: DMatrix<T>,
    names: Vec<String>,
    standardized: bool,
}

impl<T: Real> ScoreMatrix<T> {
    /// Builds a raw (unstandardized) score matrix. Requires N >= 4, M >= 2 and finite entries.
    pub fn new(values: DMatrix<T>, names: Vec<String>) -> Result<Self> {
        let (n, m) = values.shape();
        if n < 4 || m < 2 {
            return Err(Error::InvalidShape(format!(
                "score matrix must be at least 4x2, got {n}x{m}"
            )));
        }
        if names.len() != m {
            return Err(Error::LengthMismatch { expected: m, found: names.len() });
        }
        for c in 0..m {
            for r in 0..n {
                if !values[(r, c)].is_finite_val() {
                    return Err(Error::NonFinite { row: r, col: c });
                }
            }
        }
        Ok(Self { values, names, standardized: false })
    }

    /// Builds a matrix with generated names `f1..fM`.
    pub fn unnamed(values: DMatrix<T>) -> Result<Self> {
        let names = (1..=values.ncols()).map(|i| format!("f{i}")).collect();
        Self::new(values, names)
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_predictors(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Returns each column as `(x - mean) / sd` with the unbiased sample sd.
    pub fn standardize(&self) -> Result<Self> {
        let (n, m) = self.values.shape();
        let mut out = self.values.clone();
        for c in 0..m {
            let col: Vec<T> = self.values.column(c).iter().copied().collect();
            let z = standardize_column(&col).map_err(|_| Error::ConstantColumn(c))?;
            for r in 0..n {
                out[(r, c)] = z[r];
            }
        }
        Ok(Self { values: out, names: self.names.clone(), standardized: true })
    }

    /// Returns `self` if already standardized, otherwise a standardized copy (with a warning).
    pub fn ensure_standardized(&self) -> Result<std::borrow::Cow<'_, Self>> {
        if self.standardized {
            Ok(std::borrow::Cow::Borrowed(self))
        } else {
            log::warn!("raw scores supplied; standardizing columns before fitting");
            Ok(std::borrow::Cow::Owned(self.standardize()?))
        }
    }

    /// Checks the standardization invariant numerically (mean 0, sd 1 within 1e-9).
    pub fn check_standardized(&self) -> bool {
        let (n, m) = self.values.shape();
        let tol = T::lit(STD_TOL);
        (0..m).all(|c| {
            let col = self.values.column(c);
            let mean = col.sum() / T::from_usize_lossy(n);
            let var = col.iter().fold(T::zero(), |a, &x| a + (x - mean) * (x - mean))
                / T::from_usize_lossy(n - 1);
            mean.abs() <= tol && (var.sqrt() - T::one()).abs() <= tol
        })
    }

    /// Returns a copy with column `c` multiplied by `factor`. The standardized flag is kept only
    /// when `factor` is `±1`.
    pub fn scale_column(&self, c: usize, factor: T) -> Self {
        let mut out = self.clone();
        for r in 0..out.values.nrows() {
            out.values[(r, c)] *= factor;
        }
        out.standardized = self.standardized && factor.abs() == T::one();
        out
    }

    /// Reorders predictor columns: column `j` of the result is column `perm[j]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let values = DMatrix::from_fn(self.n_samples(), perm.len(), |r, c| self.values[(r, perm[c])]);
        let names = perm.iter().map(|&p| self.names[p].clone()).collect();
        Self { values, names, standardized: self.standardized }
    }
}

/// Centers and scales one column by its unbiased sample sd.
///
/// Fails with `ConstantColumn(0)` when the sd is below 1e-12 and with `TooFewSamples` for
/// fewer than two values.
pub fn standardize_column<T: Real>(col: &[T]) -> Result<Vec<T>> {
    let n = col.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, found: n });
    }
    let mean = col.iter().fold(T::zero(), |a, &x| a + x) / T::from_usize_lossy(n);
    let ss = col.iter().fold(T::zero(), |a, &x| a + (x - mean) * (x - mean));
    let sd = (ss / T::from_usize_lossy(n - 1)).sqrt();
    if sd <= T::lit(1e-12) {
        return Err(Error::ConstantColumn(0));
    }
    Ok(col.iter().map(|&x| (x - mean) / sd).collect())
}

/// Binary outcome vector with an optional "is labeled" mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    labels: Vec<u8>,
    mask: Option<Vec<bool>>,
}

impl LabelVector {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidParams(format!("label {bad} is not 0 or 1")));
        }
        Ok(Self { labels, mask: None })
    }

    /// `mask[t]` is true when sample `t` carries a usable label.
    pub fn with_mask(labels: Vec<u8>, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != labels.len() {
            return Err(Error::LengthMismatch { expected: labels.len(), found: mask.len() });
        }
        let mut v = Self::new(labels)?;
        v.mask = Some(mask);
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn is_labeled(&self, t: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[t])
    }

    /// Indices of labeled samples.
    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&t| self.is_labeled(t)).collect()
    }

    /// Counts of (negatives, positives) among labeled samples.
    pub fn class_counts(&self) -> (usize, usize) {
        let mut counts = (0, 0);
        for t in self.labeled_indices() {
            if self.labels[t] == 1 {
                counts.1 += 1;
            } else {
                counts.0 += 1;
            }
        }
        counts
    }
}

/// Symmetric M×M covariance (or correlation) matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix<T: Real> {
    entries: DMatrix<T>,
    sample_count: Option<usize>,
}

impl<T: Real> CovarianceMatrix<T> {
    /// Validates squareness, finiteness and symmetry to 1e-12 (relative to the largest entry).
    pub fn new(entries: DMatrix<T>, sample_count: Option<usize>) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::InvalidShape(format!(
                "covariance must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let m = entries.nrows();
        let scale = entries.iter().fold(T::one(), |a, &x| a.max(x.abs()));
        for i in 0..m {
            for j in 0..m {
                let x = entries[(i, j)];
                if !x.is_finite_val() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
                if (x - entries[(j, i)]).abs() > T::lit(SYM_TOL) * scale {
                    return Err(Error::NotSymmetric);
                }
            }
        }
        Ok(Self { entries, sample_count })
    }

    pub fn entries(&self) -> &DMatrix<T> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[(i, j)]
    }

    pub fn sample_count(&self) -> Option<usize> {
        self.sample_count
    }

    /// Applies the same permutation to rows and columns.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let m = perm.len();
        let entries = DMatrix::from_fn(m, m, |i, j| self.entries[(perm[i], perm[j])]);
        Self { entries, sample_count: self.sample_count }
    }
}

/// Unbiased sample covariance (divisor N−1) of standardized scores.
pub fn sample_covariance<T: Real>(scores: &ScoreMatrix<T>) -> Result<CovarianceMatrix<T>> {
    if !scores.is_standardized() {
        return Err(Error::NotStandardized);
    }
    let (n, m) = scores.values.shape();
    if n < m {
        log::warn!("fewer samples ({n}) than predictors ({m}); covariance is rank deficient");
    }
    let x = &scores.values;
    let means: Vec<T> = (0..m).map(|c| x.column(c).sum() / T::from_usize_lossy(n)).collect();
    let denom = T::from_usize_lossy(n - 1);
    let mut cov = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let mut acc = T::zero();
            for r in 0..n {
                acc += (x[(r, i)] - means[i]) * (x[(r, j)] - means[j]);
            }
            let v = acc / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    CovarianceMatrix::new(cov, Some(n))
}

/// Assignment of M predictors to K latent groups (0-based indices internally).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LatentStructure {
    k: usize,
    assignment: Vec<usize>,
}

impl LatentStructure {
    /// `assignment[i]` is the 0-based group of predictor `i`. Every group must be nonempty.
    pub fn new(k: usize, assignment: Vec<usize>) -> Result<Self> {
        let m = assignment.len();
        if k == 0 || k > m {
            return Err(Error::InvalidK { k, m });
        }
        let mut seen = vec![false; k];
        for &g in &assignment {
            if g >= k {
                return Err(Error::InvalidStructure(format!("group {g} outside 0..{k}")));
            }
            seen[g] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidStructure(format!("group {empty} is empty")));
        }
        Ok(Self { k, assignment })
    }

    /// Consecutive groups with the given sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let assignment = sizes
            .iter()
            .enumerate()
            .flat_map(|(g, &s)| std::iter::repeat_n(g, s))
            .collect();
        Self::new(sizes.len(), assignment)
    }

    /// Every predictor in its own group.
    pub fn singletons(m: usize) -> Result<Self> {
        Self::new(m, (0..m).collect())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_predictors(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn group_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    /// Members of each group in increasing index order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.k];
        for (i, &g) in self.assignment.iter().enumerate() {
            groups[g].push(i);
        }
        groups
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups().iter().map(Vec::len).collect()
    }

    /// Relabels groups in order of their smallest member.
    pub fn canonical(&self) -> Self {
        let mut map = vec![usize::MAX; self.k];
        let mut next = 0;
        let assignment = self
            .assignment
            .iter()
            .map(|&g| {
                if map[g] == usize::MAX {
                    map[g] = next;
                    next += 1;
                }
                map[g]
            })
            .collect();
        Self { k: self.k, assignment }
    }

    /// True when both structures induce the same partition, ignoring labels.
    pub fn same_partition(&self, other: &Self) -> bool {
        self.canonical() == other.canonical()
    }

    /// 0/1 mask of shape M×K marking allowed loadings.
    pub fn mask<T: Real>(&self) -> DMatrix<T> {
        let mut mask = DMatrix::zeros(self.n_predictors(), self.k);
        for (i, &g) in self.assignment.iter().enumerate() {
            mask[(i, g)] = T::one();
        }
        mask
    }

    /// Structure after reordering predictors as in [`ScoreMatrix::permute_columns`].
    pub fn permute(&self, perm: &[usize]) -> Self {
        Self { k: self.k, assignment: perm.iter().map(|&p| self.assignment[p]).collect() }
    }
}

/// Two-component Gaussian mixture of one latent model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams<T> {
    pub mu0: T,
    pub mu1: T,
    pub sigma: T,
}

impl<T: Real> MixtureParams<T> {
    pub fn new(mu0: T, mu1: T, sigma: T) -> Result<Self> {
        if sigma < T::zero() || !sigma.is_finite_val() {
            return Err(Error::InvalidParams(format!("sigma {sigma} must be finite and nonnegative")));
        }
        Ok(Self { mu0, mu1, sigma })
    }

    /// Degenerate when the two class means coincide.
    pub fn is_degenerate(&self) -> bool {
        self.mu0 == self.mu1
    }
}

/// Full parameter set of the structured model on the standardized scale.
///
/// `latent[k].sigma` is the total standard deviation of latent model `k` and
/// `latent[k].mu0`, `latent[k].mu1` are its class means after centering, so that
/// `pi * mu1 + (1 - pi) * mu0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuelParams<T: Real> {
    pub pi: T,
    pub b: Vec<T>,
    pub latent: Vec<MixtureParams<T>>,
    pub theta: Vec<T>,
    pub structure: LatentStructure,
}

impl<T: Real> SuelParams<T> {
    pub fn validate(&self) -> Result<()> {
        let m = self.structure.n_predictors();
        if !(self.pi > T::zero() && self.pi < T::one()) {
            return Err(Error::InvalidParams(format!("pi {} outside (0, 1)", self.pi)));
        }
        if self.b.len() != m {
            return Err(Error::LengthMismatch { expected: m, found: self.b.len() });
        }
        if self.theta.len() != m {
            return Err(Error::LengthMismatch { expected: m, found: self.theta.len() });
        }
        if self.latent.len() != self.structure.k() {
            return Err(Error::LengthMismatch { expected: self.structure.k(), found: self.latent.len() });
        }
        if self.theta.iter().any(|&t| t < T::zero() || !t.is_finite_val()) {
            return Err(Error::InvalidParams("theta must be finite and nonnegative".into()));
        }
        if self.b.iter().any(|&x| !x.is_finite_val()) {
            return Err(Error::InvalidParams("b must be finite".into()));
        }
        for lat in &self.latent {
            MixtureParams::new(lat.mu0, lat.mu1, lat.sigma)?;
        }
        Ok(())
    }
}

/// Per-predictor class-conditional means and common within-class sd.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorMixture<T> {
    pub mu_i0: T,
    pub mu_i1: T,
    pub sigma_i: T,
}

/// Whether weights carry an absolute scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScale {
    Absolute,
    Relative,
}

/// Ensemble weights `w_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<T: Real> {
    w: Vec<T>,
    scale: WeightScale,
}

impl<T: Real> WeightVector<T> {
    pub fn new(w: Vec<T>, scale: WeightScale) -> Result<Self> {
        if let Some(i) = w.iter().position(|x| !x.is_finite_val()) {
            return Err(Error::NonFinite { row: i, col: 0 });
        }
        if w.iter().all(|&x| x == T::zero()) {
            return Err(Error::InvalidParams("all weights are zero".into()));
        }
        Ok(Self { w, scale })
    }

    pub fn as_slice(&self) -> &[T] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn scale(&self) -> WeightScale {
        self.scale
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.w.iter().map(|x| x.as_f64()).collect()
    }
}

/// Combined ensemble scores `g(x_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleScores<T> {
    pub g: Vec<T>,
}

impl<T: Real> EnsembleScores<T> {
    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn negated(&self) -> Self {
        Self { g: self.g.iter().map(|&x| -x).collect() }
    }
}

impl<T: Real> From<Vec<T>> for EnsembleScores<T> {
    fn from(g: Vec<T>) -> Self {
        Self { g }
    }
}

/// Block-wise rank-one covariance implied by `params` with unit diagonal.
pub fn structured_covariance<T: Real>(params: &SuelParams<T>) -> Result<CovarianceMatrix<T>> {
    params.validate()?;
    let m = params.b.len();
    let odds = ((T::one() - params.pi) / params.pi).sqrt();
    let on: Vec<T> = (0..m)
        .map(|i| params.latent[params.structure.group_of(i)].sigma * params.b[i])
        .collect();
    let off: Vec<T> = (0..m)
        .map(|i| odds * params.latent[params.structure.group_of(i)].mu0 * params.b[i])
        .collect();
    let mut r = DMatrix::identity(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let v = if params.structure.group_of(i) == params.structure.group_of(j) {
                on[i] * on[j]
            } else {
                off[i] * off[j]
            };
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    CovarianceMatrix::new(r, None)
}

/// Maximum-likelihood weight `(mu1 - mu0) / (2 sigma^2)`.
pub fn likelihood_weight<T: Real>(mix: &PredictorMixture<T>) -> Result<T> {
    if mix.sigma_i <= T::lit(1e-12) {
        return Err(Error::ZeroVariance);
    }
    Ok((mix.mu_i1 - mix.mu_i0) / (T::lit(2.0) * mix.sigma_i * mix.sigma_i))
}

/// Structured weight `-b mu0 / (pi - (1 - pi) b^2 mu0^2)`.
pub fn structured_weight<T: Real>(pi: T, b_i: T, mu_k0: T) -> Result<T> {
    let denom = pi - (T::one() - pi) * b_i * b_i * mu_k0 * mu_k0;
    if denom <= T::lit(1e-9) {
        return Err(Error::DegenerateDenominator { value: denom.as_f64() });
    }
    Ok(-b_i * mu_k0 / denom)
}

/// Row-wise weighted sum of (standardized) scores.
pub fn combine<T: Real>(scores: &ScoreMatrix<T>, weights: &WeightVector<T>) -> Result<EnsembleScores<T>> {
    let m = scores.n_predictors();
    if weights.len() != m {
        return Err(Error::LengthMismatch { expected: m, found: weights.len() });
    }
    let z = scores.ensure_standardized()?;
    let w = DVector::from_column_slice(weights.as_slice());
    let g = z.values() * w;
    Ok(EnsembleScores { g: g.iter().copied().collect() })
}

/// Row-wise weighted sum without standardizing.
pub fn combine_raw<T: Real>(values: &DMatrix<T>, weights: &[T]) -> Result<EnsembleScores<T>> {
    if weights.len() != values.ncols() {
        return Err(Error::LengthMismatch { expected: values.ncols(), found: weights.len() });
    }
    let g = values * DVector::from_column_slice(weights);
    Ok(EnsembleScores { g: g.iter().copied().collect() })
}
