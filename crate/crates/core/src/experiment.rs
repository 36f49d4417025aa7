//! Per-seed benchmark runs over the simulated scenarios and their aggregation.

use serde::{Deserialize, Serialize};

use crate::baselines::{fit_average, fit_eigen_cov, fit_ground_truth, EigenOptions};
use crate::cqo::fit_cqo_cov;
use crate::error::{Error, Result};
use crate::evaluation::{best_individual, evaluate, weight_recovery, EvalReport};
use crate::mf::{fit_mf_cov, BcdOptions, PiSource};
use crate::model::{combine, sample_covariance, CovarianceMatrix, LatentStructure, ScoreMatrix, WeightVector};
use crate::report::WeightReport;
use crate::simulation::{simulate, ScenarioConfig};
use crate::structure::discover_from_covariance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mf,
    Cqo,
    Eigen,
    Average,
    BestScore,
    GroundTruth,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Mf, Method::Cqo, Method::Eigen, Method::Average, Method::BestScore, Method::GroundTruth];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mf => "mf",
            Method::Cqo => "cqo",
            Method::Eigen => "eigen",
            Method::Average => "average",
            Method::BestScore => "best_score",
            Method::GroundTruth => "ground_truth",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }

    /// Whether the method can be fitted without labels.
    pub fn is_unsupervised(self) -> bool {
        matches!(self, Method::Mf | Method::Cqo | Method::Eigen | Method::Average)
    }
}

/// Fits one unsupervised method on standardized covariance.
pub fn fit_unsupervised(
    method: Method,
    cov: &CovarianceMatrix<f64>,
    structure: &LatentStructure,
) -> Result<(WeightVector<f64>, WeightReport)> {
    match method {
        Method::Mf => {
            let fit = fit_mf_cov(cov, structure, BcdOptions::default(), PiSource::Relative)?;
            Ok((fit.weights.clone(), WeightReport::from_mf(&fit)))
        }
        Method::Cqo => {
            let fit = fit_cqo_cov(cov, structure)?;
            Ok((fit.weights.clone(), WeightReport::from_cqo(&fit)))
        }
        Method::Eigen => {
            let w = fit_eigen_cov(cov, &EigenOptions::default())?;
            let r = WeightReport::plain("eigen", &w);
            Ok((w, r))
        }
        Method::Average => {
            let w = fit_average(cov.dim())?;
            let r = WeightReport::plain("average", &w);
            Ok((w, r))
        }
        other => Err(Error::InvalidConfig(format!("method '{}' needs labels or truth", other.name()))),
    }
}

/// Where the structure used by the structured estimators comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureSource {
    Discovered,
    Truth,
    /// Discovery with the number of groups forced.
    ForcedK(usize),
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub report: std::result::Result<EvalReport, Error>,
    /// (Pearson, Spearman) correlation with the true weights.
    pub recovery: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub selected_k: usize,
    pub structure: LatentStructure,
    pub partition_recovered: bool,
    pub methods: Vec<MethodOutcome>,
}

impl SeedOutcome {
    pub fn get(&self, m: Method) -> Option<&MethodOutcome> {
        self.methods.iter().find(|o| o.method == m)
    }
}

/// Simulates one seed, fits the requested methods and evaluates them against the labels.
pub fn run_seed(config: &ScenarioConfig, seed: u64, source: StructureSource, methods: &[Method]) -> Result<SeedOutcome> {
    let cfg = config.with_seed(seed);
    let (scores, truth) = simulate::<f64>(&cfg)?;
    let cov = sample_covariance(&scores)?;
    let discovery = match source {
        StructureSource::ForcedK(k) => Some(discover_from_covariance(cov.clone(), Some(k))?),
        StructureSource::Discovered => Some(discover_from_covariance(cov.clone(), None)?),
        StructureSource::Truth => None,
    };
    let (structure, selected_k) = match &discovery {
        Some(d) => (d.structure.clone(), d.spectrum.selected_k),
        None => (truth.assignment.clone(), truth.assignment.k()),
    };
    let partition_recovered = structure.same_partition(&truth.assignment);
    let outcomes = methods
        .iter()
        .map(|&method| {
            let result = method_scores(method, &scores, &cov, &structure, &truth);
            match result {
                Ok((report, weights)) => MethodOutcome {
                    method,
                    report: Ok(report),
                    recovery: weights.and_then(|w| weight_recovery(&w, &truth.true_weights).ok()),
                },
                Err(e) => {
                    log::warn!("seed {seed}: {} failed: {e}", method.name());
                    MethodOutcome { method, report: Err(e), recovery: None }
                }
            }
        })
        .collect();
    Ok(SeedOutcome { seed, selected_k, structure, partition_recovered, methods: outcomes })
}

fn method_scores(
    method: Method,
    scores: &ScoreMatrix<f64>,
    cov: &CovarianceMatrix<f64>,
    structure: &LatentStructure,
    truth: &crate::simulation::SimulationTruth<f64>,
) -> Result<(EvalReport, Option<WeightVector<f64>>)> {
    match method {
        Method::BestScore => Ok((best_individual(scores, &truth.labels)?.1, None)),
        Method::GroundTruth => {
            let w = fit_ground_truth(Some(truth))?;
            let g = combine(scores, &w)?;
            Ok((evaluate(method.name(), &g, &truth.labels)?, Some(w)))
        }
        _ => {
            let (w, _) = fit_unsupervised(method, cov, structure)?;
            let g = combine(scores, &w)?;
            Ok((evaluate(method.name(), &g, &truth.labels)?, Some(w)))
        }
    }
}

/// Means across seeds for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    pub roc_mean: f64,
    pub prc_mean: f64,
    pub roc_sd: f64,
    pub prc_sd: f64,
    pub first_decile_median: f64,
    pub pearson_median: Option<f64>,
    pub spearman_median: Option<f64>,
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Aggregates one method over seeds, skipping failed fits.
pub fn summarize(outcomes: &[SeedOutcome], method: Method) -> MethodSummary {
    let mut roc = Vec::new();
    let mut prc = Vec::new();
    let mut d1 = Vec::new();
    let mut pear = Vec::new();
    let mut spear = Vec::new();
    let mut n_failed = 0;
    for o in outcomes {
        let Some(m) = o.get(method) else { continue };
        match &m.report {
            Ok(r) => {
                roc.push(r.roc_auc);
                prc.push(r.prc_auc);
                d1.push(r.decile_positive_counts[0] as f64);
            }
            Err(_) => n_failed += 1,
        }
        if let Some((p, s)) = m.recovery {
            pear.push(p);
            spear.push(s);
        }
    }
    let (roc_mean, roc_sd) = mean_sd(&roc);
    let (prc_mean, prc_sd) = mean_sd(&prc);
    MethodSummary {
        method,
        n_ok: roc.len(),
        n_failed,
        roc_mean,
        prc_mean,
        roc_sd,
        prc_sd,
        first_decile_median: median(&d1),
        pearson_median: (!pear.is_empty()).then(|| median(&pear)),
        spearman_median: (!spear.is_empty()).then(|| median(&spear)),
    }
}

pub const TABLE_HEADER: &str = "scenario,method,n_seeds,roc_auc_mean,roc_auc_sd,prc_auc_mean,prc_auc_sd,first_decile_median";

pub fn table_row(scenario: &str, s: &MethodSummary) -> String {
    use crate::io::fmt_f64;
    format!(
        "{scenario},{},{},{},{},{},{},{}",
        s.method.name(),
        s.n_ok,
        fmt_f64(s.roc_mean),
        fmt_f64(s.roc_sd),
        fmt_f64(s.prc_mean),
        fmt_f64(s.prc_sd),
        fmt_f64(s.first_decile_median)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::scenario;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("svm").is_err());
    }

    #[test]
    fn seed_run_produces_all_methods() {
        let cfg = scenario(2).unwrap();
        let out = run_seed(&cfg, 3, StructureSource::Truth, &Method::ALL).unwrap();
        assert!(out.partition_recovered);
        assert_eq!(out.methods.len(), 6);
        for m in &out.methods {
            let r = m.report.as_ref().unwrap();
            assert!(r.roc_auc > 0.5, "{:?} {}", m.method, r.roc_auc);
        }
        let s = summarize(std::slice::from_ref(&out), Method::Mf);
        assert_eq!(s.n_ok, 1);
        assert!(s.pearson_median.is_some());
    }
}
