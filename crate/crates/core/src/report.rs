//! Serializable reports for structures, fits and simulated truth.

use serde::{Deserialize, Serialize};

use crate::cqo::CqoFit;
use crate::error::Result;
use crate::mf::MfFit;
use crate::model::{LatentStructure, WeightScale, WeightVector};
use crate::scalar::Real;
use crate::simulation::{ScenarioConfig, SimulationTruth};
use crate::structure::{Discovery, SelectionRule};

fn vec_f64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn rows_f64<T: Real>(m: &nalgebra::DMatrix<T>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)].as_f64()).collect()).collect()
}

/// Discovered structure. `assignment` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub k: usize,
    pub assignment: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eigenvalues: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub explained_variance_ratio: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_rule: Option<SelectionRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity_matrix: Option<Vec<Vec<f64>>>,
}

impl StructureReport {
    pub fn from_structure(s: &LatentStructure) -> Self {
        Self {
            k: s.k(),
            assignment: s.assignment().iter().map(|g| g + 1).collect(),
            eigenvalues: Vec::new(),
            explained_variance_ratio: Vec::new(),
            selection_rule: None,
            similarity_matrix: None,
        }
    }

    pub fn from_discovery<T: Real>(d: &Discovery<T>) -> Self {
        Self {
            eigenvalues: vec_f64(&d.spectrum.eigenvalues),
            explained_variance_ratio: vec_f64(&d.spectrum.explained_variance_ratio),
            selection_rule: Some(d.spectrum.selection_rule),
            similarity_matrix: d.similarity.as_ref().map(|s| rows_f64(s.matrix())),
            ..Self::from_structure(&d.structure)
        }
    }

    pub fn to_structure(&self) -> Result<LatentStructure> {
        let assignment = self
            .assignment
            .iter()
            .map(|&g| {
                g.checked_sub(1)
                    .ok_or_else(|| crate::Error::InvalidStructure("group indices are 1-based".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        LatentStructure::new(self.k, assignment)
    }
}

/// Fitted weights with estimator-specific details.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub method: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predictor_names: Vec<String>,
    pub weights: Vec<f64>,
    pub scale_note: WeightScale,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_hat: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu0_hat: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_norm: Option<f64>,
    /// 1-based predictor pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropped_pairs: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_trace: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_mat: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_diag: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<StructureReport>,
}

impl WeightReport {
    pub fn plain<T: Real>(method: &str, w: &WeightVector<T>) -> Self {
        Self {
            method: method.to_string(),
            predictor_names: Vec::new(),
            weights: w.to_f64(),
            scale_note: w.scale(),
            pi_hat: None,
            b_hat: None,
            mu0_hat: None,
            residual_norm: None,
            dropped_pairs: None,
            iterations: None,
            objective_trace: None,
            b_mat: None,
            q: None,
            theta_diag: None,
            structure: None,
        }
    }

    pub fn from_cqo<T: Real>(fit: &CqoFit<T>) -> Self {
        Self {
            pi_hat: Some(fit.signed.pi.as_f64()),
            b_hat: Some(vec_f64(&fit.signed.b)),
            mu0_hat: Some(vec_f64(&fit.signed.mu0)),
            residual_norm: Some(fit.solution.residual_norm.as_f64()),
            dropped_pairs: Some(fit.system.dropped.iter().map(|&(i, j)| (i + 1, j + 1)).collect()),
            ..Self::plain("cqo", &fit.weights)
        }
    }

    pub fn from_mf<T: Real>(fit: &MfFit<T>) -> Self {
        Self {
            iterations: Some(fit.state.iterations),
            objective_trace: Some(vec_f64(&fit.state.objective_trace)),
            b_mat: Some(rows_f64(&fit.state.b_mat)),
            q: Some(vec_f64(&fit.extracted.q)),
            theta_diag: Some(fit.state.theta_diag.iter().map(|x| x.as_f64()).collect()),
            ..Self::plain("mf", &fit.weights)
        }
    }

    pub fn with_names(mut self, names: &[String]) -> Self {
        self.predictor_names = names.to_vec();
        self
    }

    pub fn with_structure(mut self, s: StructureReport) -> Self {
        self.structure = Some(s);
        self
    }

    pub fn to_weights(&self) -> Result<WeightVector<f64>> {
        WeightVector::new(self.weights.clone(), self.scale_note)
    }
}

/// Ground truth of a simulated dataset (labels are stored separately).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthReport {
    pub config: ScenarioConfig,
    pub b_true: Vec<f64>,
    /// 1-based group of each predictor.
    pub assignment: Vec<usize>,
    pub true_weights: Vec<f64>,
    pub tau: Vec<f64>,
}

impl TruthReport {
    pub fn new<T: Real>(config: &ScenarioConfig, truth: &SimulationTruth<T>) -> Self {
        Self {
            config: config.clone(),
            b_true: vec_f64(&truth.b_true),
            assignment: truth.assignment.assignment().iter().map(|g| g + 1).collect(),
            true_weights: vec_f64(&truth.true_weights),
            tau: vec_f64(&truth.tau),
        }
    }
}
