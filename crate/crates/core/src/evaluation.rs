//! Label-based metrics: ROC-AUC, average precision, decile counts and weight recovery.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EnsembleScores, LabelVector, ScoreMatrix, WeightVector};
use crate::scalar::Real;

/// Metrics of one scoring method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method_name: String,
    pub roc_auc: f64,
    pub prc_auc: f64,
    pub decile_positive_counts: [usize; 10],
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "method,roc_auc,prc_auc,d1,d2,d3,d4,d5,d6,d7,d8,d9,d10";

    /// One CSV row matching [`Self::CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        let mut row = format!(
            "{},{},{}",
            self.method_name,
            crate::io::fmt_f64(self.roc_auc),
            crate::io::fmt_f64(self.prc_auc)
        );
        for c in self.decile_positive_counts {
            row.push_str(&format!(",{c}"));
        }
        row
    }

    /// Long-format decile rows `method,decile,positives`.
    pub fn decile_rows(&self) -> Vec<String> {
        self.decile_positive_counts
            .iter()
            .enumerate()
            .map(|(d, c)| format!("{},{},{}", self.method_name, d + 1, c))
            .collect()
    }
}

fn labeled<T: Real>(scores: &EnsembleScores<T>, labels: &LabelVector) -> Result<Vec<(f64, u8, usize)>> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch { expected: labels.len(), found: scores.len() });
    }
    Ok(labels
        .labeled_indices()
        .into_iter()
        .map(|t| (scores.g[t].as_f64(), labels.labels()[t], t))
        .collect())
}

/// Descending score, ascending index.
fn rank_order(items: &mut [(f64, u8, usize)]) {
    items.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.2.cmp(&b.2)));
}

/// Mann–Whitney statistic over positive/negative pairs, ties counting one half.
pub fn roc_auc<T: Real>(scores: &EnsembleScores<T>, labels: &LabelVector) -> Result<f64> {
    let mut items = labeled(scores, labels)?;
    let n_pos = items.iter().filter(|x| x.1 == 1).count();
    let n_neg = items.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    // Ascending by score; twice the rank sum keeps everything integral.
    items.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut twice_rank_sum_pos: u128 = 0;
    let mut start = 0;
    while start < items.len() {
        let mut end = start + 1;
        while end < items.len() && items[end].0 == items[start].0 {
            end += 1;
        }
        // Ranks start+1..=end share the midrank (start + 1 + end) / 2.
        let twice_mid = (start + 1 + end) as u128;
        let pos = items[start..end].iter().filter(|x| x.1 == 1).count() as u128;
        twice_rank_sum_pos += pos * twice_mid;
        start = end;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    let twice_u = twice_rank_sum_pos - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * q) as f64)
}

/// Average precision over positives in descending-score order.
pub fn prc_auc<T: Real>(scores: &EnsembleScores<T>, labels: &LabelVector) -> Result<f64> {
    let mut items = labeled(scores, labels)?;
    let n_pos = items.iter().filter(|x| x.1 == 1).count();
    if n_pos == 0 {
        return Err(Error::NoPositives);
    }
    rank_order(&mut items);
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, item) in items.iter().enumerate() {
        if item.1 == 1 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / n_pos as f64)
}

/// Positive counts in ten contiguous rank bins; the first `N mod 10` bins hold one extra sample.
pub fn decile_analysis<T: Real>(scores: &EnsembleScores<T>, labels: &LabelVector) -> Result<[usize; 10]> {
    let mut items = labeled(scores, labels)?;
    let n = items.len();
    if n < 10 {
        return Err(Error::TooFewSamples { needed: 10, found: n });
    }
    rank_order(&mut items);
    let (base, extra) = (n / 10, n % 10);
    let mut counts = [0usize; 10];
    let mut pos = 0;
    for (d, count) in counts.iter_mut().enumerate() {
        let size = base + usize::from(d < extra);
        *count = items[pos..pos + size].iter().filter(|x| x.1 == 1).count();
        pos += size;
    }
    Ok(counts)
}

/// All three metrics for one method.
pub fn evaluate<T: Real>(method: &str, scores: &EnsembleScores<T>, labels: &LabelVector) -> Result<EvalReport> {
    Ok(EvalReport {
        method_name: method.to_string(),
        roc_auc: roc_auc(scores, labels)?,
        prc_auc: prc_auc(scores, labels)?,
        decile_positive_counts: decile_analysis(scores, labels)?,
    })
}

/// Column with the highest orientation-free ROC-AUC, evaluated in its better orientation.
pub fn best_individual<T: Real>(scores: &ScoreMatrix<T>, labels: &LabelVector) -> Result<(usize, EvalReport)> {
    let mut best: Option<(usize, f64, EnsembleScores<T>)> = None;
    for c in 0..scores.n_predictors() {
        let col = EnsembleScores { g: scores.values().column(c).iter().copied().collect() };
        let auc = roc_auc(&col, labels)?;
        let (oriented, score) = if auc < 0.5 { (col.negated(), 1.0 - auc) } else { (col, auc) };
        if best.as_ref().is_none_or(|b| score > b.1) {
            best = Some((c, score, oriented));
        }
    }
    let (idx, _, g) = best.ok_or(Error::TooFewPredictors { needed: 1, found: 0 })?;
    Ok((idx, evaluate("best_score", &g, labels)?))
}

fn midranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let mid = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mid;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation; `ZeroVariance` when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), found: b.len() });
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    if saa.sqrt() <= 1e-12 * scale || sbb.sqrt() <= 1e-12 * scale {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), found: b.len() });
    }
    pearson(&midranks(a), &midranks(b))
}

/// (Pearson, Spearman) correlation between estimated and true weights.
pub fn weight_recovery<T: Real>(estimated: &WeightVector<T>, truth: &[T]) -> Result<(f64, f64)> {
    let est = estimated.to_f64();
    let tru: Vec<f64> = truth.iter().map(|x| x.as_f64()).collect();
    Ok((pearson(&est, &tru)?, spearman(&est, &tru)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn es(v: &[f64]) -> EnsembleScores<f64> {
        EnsembleScores { g: v.to_vec() }
    }

    fn lv(v: &[u8]) -> LabelVector {
        LabelVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn roc_examples() {
        assert_eq!(roc_auc(&es(&[0.9, 0.8, 0.3, 0.2]), &lv(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(roc_auc(&es(&[0.9, 0.8, 0.3, 0.2]), &lv(&[1, 0, 1, 0])).unwrap(), 0.75);
        assert_eq!(roc_auc(&es(&[1.0; 5]), &lv(&[1, 0, 1, 0, 0])).unwrap(), 0.5);
        assert_eq!(roc_auc(&es(&[1.0, 2.0]), &lv(&[1, 1])).unwrap_err(), Error::SingleClass);
    }

    #[test]
    fn roc_respects_mask() {
        let labels = LabelVector::with_mask(vec![1, 0, 1, 0], vec![true, true, false, true]).unwrap();
        assert_eq!(roc_auc(&es(&[0.9, 0.8, 0.3, 0.2]), &labels).unwrap(), 1.0);
    }

    #[test]
    fn prc_examples() {
        assert_eq!(prc_auc(&es(&[0.9, 0.8, 0.3, 0.2]), &lv(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(prc_auc(&es(&[0.9, 0.8, 0.3, 0.2]), &lv(&[0, 1, 0, 0])).unwrap(), 0.5);
        assert_eq!(prc_auc(&es(&[0.9, 0.8]), &lv(&[0, 0])).unwrap_err(), Error::NoPositives);
        // Tied scores resolve by index.
        assert_eq!(prc_auc(&es(&[1.0, 1.0]), &lv(&[0, 1])).unwrap(), 0.5);
    }

    #[test]
    fn decile_examples() {
        let scores: Vec<f64> = (0..20).map(|i| 20.0 - i as f64).collect();
        let mut labels = vec![0u8; 20];
        labels[0] = 1;
        labels[1] = 1;
        assert_eq!(decile_analysis(&es(&scores), &lv(&labels)).unwrap(), [2, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        let scores: Vec<f64> = (0..100).map(|i| -(i as f64)).collect();
        let labels: Vec<u8> = (0..100).map(|i| u8::from(i % 10 == 3)).collect();
        assert_eq!(decile_analysis(&es(&scores), &lv(&labels)).unwrap(), [1; 10]);
        assert!(matches!(decile_analysis(&es(&[1.0; 9]), &lv(&[1; 9])), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn decile_remainder_goes_first() {
        // 13 samples: bins of size 2,2,2,1,... ; the third-ranked sample lands in decile 2.
        let scores: Vec<f64> = (0..13).map(|i| -(i as f64)).collect();
        let mut labels = vec![0u8; 13];
        labels[2] = 1;
        labels[12] = 1;
        let c = decile_analysis(&es(&scores), &lv(&labels)).unwrap();
        assert_eq!(c, [0, 1, 0, 0, 0, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn best_individual_picks_label_column() {
        let labels = vec![1u8, 0, 1, 0, 0, 1, 0, 0, 1, 0, 1, 0];
        let v = nalgebra::DMatrix::from_fn(12, 3, |r, c| match c {
            0 => r as f64,
            1 => -(labels[r] as f64) + 0.01 * r as f64,
            _ => (r * r % 5) as f64,
        });
        let s = ScoreMatrix::unnamed(v).unwrap();
        let (idx, rep) = best_individual(&s, &lv(&labels)).unwrap();
        assert_eq!(idx, 1);
        assert_eq!(rep.roc_auc, 1.0);
    }

    #[test]
    fn recovery_correlations() {
        let t = [0.1, 0.5, 0.2, 0.9];
        let w = WeightVector::new(t.to_vec(), crate::model::WeightScale::Relative).unwrap();
        let (p, s) = weight_recovery(&w, &t).unwrap();
        assert!((p - 1.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        let w2 = WeightVector::new(t.iter().map(|x| 2.0 * x).collect(), crate::model::WeightScale::Relative).unwrap();
        let (p, s) = weight_recovery(&w2, &t).unwrap();
        assert!((p - 1.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        let flat = WeightVector::new(vec![1.0; 4], crate::model::WeightScale::Relative).unwrap();
        assert_eq!(weight_recovery(&flat, &t).unwrap_err(), Error::ZeroVariance);
    }

    #[test]
    fn report_csv_shape() {
        let r = EvalReport { method_name: "mf".into(), roc_auc: 0.5, prc_auc: 0.25, decile_positive_counts: [1; 10] };
        assert_eq!(r.csv_row().split(',').count(), EvalReport::CSV_HEADER.split(',').count());
        assert_eq!(r.decile_rows().len(), 10);
    }
}
