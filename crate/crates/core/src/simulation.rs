//! Simulated scenarios with known generating parameters.
//!
//! Randomness comes from ChaCha8 streams derived from the seed: labels, each predictor's
//! loading, each latent model's within-class draws and each predictor's noise use separate
//! streams, so adding predictors does not perturb the draws of existing ones.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabelVector, LatentStructure, MixtureParams, ScoreMatrix, SuelParams};
use crate::scalar::Real;

const TAG_LABELS: u64 = 1;
const TAG_LOADING: u64 = 2;
const TAG_LATENT: u64 = 3;
const TAG_NOISE: u64 = 4;

fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 32) | index);
    rng
}

/// Generating configuration of one scenario (raw scale).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub n: usize,
    /// Probability of class 1.
    pub pi: f64,
    /// Class-conditional means and within-class sd of each latent model.
    pub latent: Vec<MixtureParams<f64>>,
    pub group_sizes: Vec<usize>,
    pub b_range: (f64, f64),
    pub noise_sd: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n < 4 {
            return bad(format!("n = {} is below 4", self.n));
        }
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return bad(format!("pi = {} outside (0, 1)", self.pi));
        }
        if self.latent.is_empty() || self.latent.len() != self.group_sizes.len() {
            return bad("latent and group_sizes must be nonempty and of equal length".into());
        }
        if self.group_sizes.contains(&0) {
            return bad("group sizes must be positive".into());
        }
        if self.m() < 2 {
            return bad("need at least two predictors".into());
        }
        let (lo, hi) = self.b_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("b_range ({lo}, {hi}) must satisfy 0 < low <= high"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be finite and nonnegative".into());
        }
        for (k, lat) in self.latent.iter().enumerate() {
            if lat.sigma < 0.0 || !lat.mu0.is_finite() || !lat.mu1.is_finite() || !lat.sigma.is_finite() {
                return bad(format!("latent model {k} has invalid parameters"));
            }
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn structure(&self) -> Result<LatentStructure> {
        LatentStructure::from_sizes(&self.group_sizes)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }
}

/// Ground truth accompanying a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTruth<T: Real> {
    pub labels: LabelVector,
    /// N×K latent model values.
    pub latent_scores: DMatrix<T>,
    pub b_true: Vec<T>,
    pub assignment: LatentStructure,
    /// Maximum-likelihood weights on the standardized scale.
    pub true_weights: Vec<T>,
    /// Population total sd of each raw predictor.
    pub tau: Vec<T>,
}

fn mixture(mu0: f64, mu1: f64, sigma: f64) -> MixtureParams<f64> {
    MixtureParams { mu0, mu1, sigma }
}

/// The three reference scenarios at N = 400 with seed 0.
pub fn scenario_presets() -> [ScenarioConfig; 3] {
    let base = |name: &str, latent: Vec<MixtureParams<f64>>, group_sizes: Vec<usize>| ScenarioConfig {
        name: name.to_string(),
        n: 400,
        pi: 0.2,
        latent,
        group_sizes,
        b_range: (0.4, 0.9),
        noise_sd: 1.0,
        seed: 0,
    };
    let s1_mu0 = [-5.0, -1.0, -5.2, -1.04, -5.0, -1.0, -5.2, -1.04];
    let s1_mu1 = [1.25, 0.25, 1.3, 0.26, 1.25, 0.25, 1.3, 0.26];
    let s1 = (0..8).map(|k| mixture(s1_mu0[k], s1_mu1[k], 4.0 + k as f64)).collect();
    let s2 = vec![
        mixture(-5.0, 1.25, 6.0),
        mixture(-1.0, 0.25, 6.0),
        mixture(-5.2, 1.3, 3.0),
        mixture(-1.04, 0.26, 3.0),
    ];
    let s3 = vec![mixture(-5.0, 1.25, 5.0), mixture(-1.0, 0.25, 2.0)];
    [
        base("scenario1", s1, vec![1; 8]),
        base("scenario2", s2, vec![9, 6, 7, 5]),
        base("scenario3", s3, vec![20, 2]),
    ]
}

/// Preset by 1-based scenario number.
pub fn scenario(number: usize) -> Result<ScenarioConfig> {
    scenario_presets()
        .into_iter()
        .nth(number.wrapping_sub(1))
        .ok_or_else(|| Error::InvalidConfig(format!("unknown scenario {number}; expected 1, 2 or 3")))
}

/// Draws a dataset. Columns are standardized before return.
pub fn simulate<T: Real>(config: &ScenarioConfig) -> Result<(ScoreMatrix<T>, SimulationTruth<T>)> {
    config.validate()?;
    let structure = config.structure()?;
    let (n, m, k) = (config.n, config.m(), config.latent.len());

    let mut label_rng = stream(config.seed, TAG_LABELS, 0);
    let labels: Vec<u8> = (0..n).map(|_| u8::from(label_rng.random::<f64>() < config.pi)).collect();

    let (lo, hi) = config.b_range;
    let b: Vec<f64> = (0..m)
        .map(|i| {
            let mut rng = stream(config.seed, TAG_LOADING, i as u64);
            lo + (hi - lo) * rng.random::<f64>()
        })
        .collect();

    let mut h = DMatrix::<f64>::zeros(n, k);
    for (kk, lat) in config.latent.iter().enumerate() {
        let mut rng = stream(config.seed, TAG_LATENT, kk as u64);
        for t in 0..n {
            let mean = if labels[t] == 1 { lat.mu1 } else { lat.mu0 };
            let e: f64 = rng.sample(StandardNormal);
            h[(t, kk)] = mean + lat.sigma * e;
        }
    }

    let mut raw = DMatrix::<f64>::zeros(n, m);
    for i in 0..m {
        let g = structure.group_of(i);
        let mut rng = stream(config.seed, TAG_NOISE, i as u64);
        for t in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            raw[(t, i)] = b[i] * h[(t, g)] + config.noise_sd * e;
        }
    }

    let pi = config.pi;
    let mut true_weights = Vec::with_capacity(m);
    let mut tau = Vec::with_capacity(m);
    for i in 0..m {
        let lat = &config.latent[structure.group_of(i)];
        let delta = b[i] * (lat.mu1 - lat.mu0);
        let within = b[i] * b[i] * lat.sigma * lat.sigma + config.noise_sd * config.noise_sd;
        let total = (within + pi * (1.0 - pi) * delta * delta).sqrt();
        if within <= 1e-24 {
            return Err(Error::InvalidConfig(format!("predictor {i} has zero within-class variance")));
        }
        true_weights.push(T::lit((delta / total) / (2.0 * within / (total * total))));
        tau.push(T::lit(total));
    }

    let names = (1..=m).map(|i| format!("f{i}")).collect();
    let scores = ScoreMatrix::new(raw.map(T::lit), names)?
        .standardize()
        .map_err(|e| Error::InvalidConfig(format!("degenerate simulated column: {e}")))?;
    let truth = SimulationTruth {
        labels: LabelVector::new(labels)?,
        latent_scores: h.map(T::lit),
        b_true: b.into_iter().map(T::lit).collect(),
        assignment: structure,
        true_weights,
        tau,
    };
    Ok((scores, truth))
}

/// Maps the realized raw parameters to the standardized block-covariance form.
///
/// Loadings and noise are divided by the total sd of each predictor; each latent model is
/// centered and described by its total sd.
pub fn standardized_params<T: Real>(config: &ScenarioConfig, truth: &SimulationTruth<T>) -> Result<SuelParams<T>> {
    let pi = config.pi;
    let latent = config
        .latent
        .iter()
        .map(|lat| {
            let centre = pi * lat.mu1 + (1.0 - pi) * lat.mu0;
            let delta = lat.mu1 - lat.mu0;
            let total = (lat.sigma * lat.sigma + pi * (1.0 - pi) * delta * delta).sqrt();
            MixtureParams::new(T::lit(lat.mu0 - centre), T::lit(lat.mu1 - centre), T::lit(total))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = truth.b_true.len();
    let b = (0..m).map(|i| truth.b_true[i] / truth.tau[i]).collect();
    let theta = (0..m).map(|i| T::lit(config.noise_sd) / truth.tau[i]).collect();
    let params = SuelParams { pi: T::lit(pi), b, latent, theta, structure: truth.assignment.clone() };
    params.validate()?;
    Ok(params)
}

/// Draws `n` samples from standardized-form parameters.
///
/// Latent model `k` has total sd `sigma_k` and centered class means, so its within-class
/// variance is `sigma_k² − π(1 − π)(mu1 − mu0)²`; a negative value means the parameters are not
/// realizable by any mixture and is reported as `InvalidParams`.
pub fn sample_params<T: Real>(params: &SuelParams<T>, n: usize, seed: u64) -> Result<(ScoreMatrix<T>, LabelVector)> {
    params.validate()?;
    let pi = params.pi.as_f64();
    let m = params.b.len();
    let mut within_sd = Vec::with_capacity(params.latent.len());
    for (k, lat) in params.latent.iter().enumerate() {
        let (mu0, mu1, sigma) = (lat.mu0.as_f64(), lat.mu1.as_f64(), lat.sigma.as_f64());
        let centre = pi * mu1 + (1.0 - pi) * mu0;
        if centre.abs() > 1e-9 * (1.0 + mu0.abs() + mu1.abs()) {
            return Err(Error::InvalidParams(format!("latent model {k} is not centered (mean {centre})")));
        }
        let var = sigma * sigma - pi * (1.0 - pi) * (mu1 - mu0) * (mu1 - mu0);
        if var < 0.0 {
            return Err(Error::InvalidParams(format!(
                "latent model {k}: between-class variance {} exceeds total variance {}",
                pi * (1.0 - pi) * (mu1 - mu0) * (mu1 - mu0),
                sigma * sigma
            )));
        }
        within_sd.push(var.sqrt());
    }
    let mut label_rng = stream(seed, TAG_LABELS, 0);
    let labels: Vec<u8> = (0..n).map(|_| u8::from(label_rng.random::<f64>() < pi)).collect();
    let k = params.latent.len();
    let mut h = DMatrix::<f64>::zeros(n, k);
    for kk in 0..k {
        let mut rng = stream(seed, TAG_LATENT, kk as u64);
        let lat = &params.latent[kk];
        for t in 0..n {
            let mean = if labels[t] == 1 { lat.mu1.as_f64() } else { lat.mu0.as_f64() };
            let e: f64 = rng.sample(StandardNormal);
            h[(t, kk)] = mean + within_sd[kk] * e;
        }
    }
    let mut raw = DMatrix::<f64>::zeros(n, m);
    for i in 0..m {
        let g = params.structure.group_of(i);
        let (b, th) = (params.b[i].as_f64(), params.theta[i].as_f64());
        let mut rng = stream(seed, TAG_NOISE, i as u64);
        for t in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            raw[(t, i)] = b * h[(t, g)] + th * e;
        }
    }
    let scores = ScoreMatrix::unnamed(raw.map(T::lit))?;
    Ok((scores, LabelVector::new(labels)?))
}
