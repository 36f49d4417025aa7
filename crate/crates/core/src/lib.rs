//! Unsupervised combination of dependent continuous predictor scores.
//!
//! Predictors are grouped into latent models discovered from the sample covariance, and the
//! ensemble weights are estimated by either a sign-constrained log-linear least-squares fit
//! ([`cqo`]) or a structured low-rank matrix factorization ([`mf`]). Every estimator is generic
//! over [`Real`] (`f32` or `f64`); the aliases below fix `f64`.

// Index loops over parallel arrays read better than zipped iterators in the numeric code.
#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod cqo;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod mf;
pub mod model;
pub mod nnls;
pub mod report;
pub mod scalar;
pub mod simulation;
pub mod structure;

pub use error::{Error, Result};
pub use model::{LabelVector, LatentStructure, MixtureParams, PredictorMixture, WeightScale};
pub use scalar::Real;

pub type ScoreMatrix = model::ScoreMatrix<f64>;
pub type CovarianceMatrix = model::CovarianceMatrix<f64>;
pub type SuelParams = model::SuelParams<f64>;
pub type WeightVector = model::WeightVector<f64>;
pub type EnsembleScores = model::EnsembleScores<f64>;
pub type SimulationTruth = simulation::SimulationTruth<f64>;
pub type FactorState = mf::FactorState<f64>;
pub type CqoSolution = cqo::CqoSolution<f64>;
pub type LogLinearSystem = cqo::LogLinearSystem<f64>;
pub type QuartetSimilarity = structure::QuartetSimilarity<f64>;
pub type SpectrumReport = structure::SpectrumReport<f64>;
