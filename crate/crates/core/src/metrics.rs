//! Challenge evaluation protocol: threshold-swept ROC curve, trapezoidal
//! AUC, and sensitivity at 95% specificity.
//!
//! The ROC curve is produced by sweeping the decision threshold from 0.0
//! to 1.0 in steps of 1e-4 (10001 points). A file is predicted positive
//! at threshold `t` iff its score is `>= t`, so threshold 0 yields the
//! all-positive corner of the curve.

use std::collections::HashMap;

use thiserror::Error;

use crate::inference::ScoreRecord;

/// Decision-threshold step for the ROC sweep.
pub const THRESHOLD_STEP: f64 = 1e-4;
/// Number of thresholds in the sweep (0.0 to 1.0 inclusive).
pub const N_THRESHOLDS: usize = 10_001;

#[derive(Debug, Error)]
pub enum MetricsError {
    /// Both classes must be present to define an ROC curve.
    #[error("labels contain only one class (n_pos={n_pos}, n_neg={n_neg})")]
    DegenerateLabels { n_pos: usize, n_neg: usize },
    #[error("score/label coverage mismatch: {0}")]
    CoverageMismatch(String),
}

/// One point of the swept ROC curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub specificity: f64,
    pub sensitivity: f64,
}

/// Threshold-swept ROC curve: 10001 points, thresholds ascending by 1e-4.
#[derive(Debug, Clone)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub n_positive: usize,
    pub n_negative: usize,
}

/// Final evaluation result as reported by the scoring portal.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalResult {
    pub auc: f64,
    pub sens_at_95spec: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Sweep the decision threshold over scored files with known labels.
///
/// `labels` maps file id to true class (`true` = positive). Every score
/// must have a label and vice versa.
pub fn roc_curve(
    scores: &[ScoreRecord],
    labels: &HashMap<String, bool>,
) -> Result<RocCurve, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::CoverageMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut pairs = Vec::with_capacity(scores.len());
    for rec in scores {
        let label = labels.get(&rec.file_id).ok_or_else(|| {
            MetricsError::CoverageMismatch(format!("no label for file '{}'", rec.file_id))
        })?;
        pairs.push((rec.probability, *label));
    }
    roc_from_pairs(&pairs)
}

/// ROC sweep over bare (score, is_positive) pairs.
pub fn roc_from_pairs(pairs: &[(f64, bool)]) -> Result<RocCurve, MetricsError> {
    let n_positive = pairs.iter().filter(|(_, y)| *y).count();
    let n_negative = pairs.len() - n_positive;
    if n_positive == 0 || n_negative == 0 {
        return Err(MetricsError::DegenerateLabels {
            n_pos: n_positive,
            n_neg: n_negative,
        });
    }

    let mut sorted: Vec<(f64, bool)> = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // pos_suffix[i] = positives among sorted[i..]
    let mut pos_suffix = vec![0usize; sorted.len() + 1];
    for i in (0..sorted.len()).rev() {
        pos_suffix[i] = pos_suffix[i + 1] + usize::from(sorted[i].1);
    }

    let mut points = Vec::with_capacity(N_THRESHOLDS);
    let mut cut = 0usize; // first index with score >= threshold
    for step in 0..N_THRESHOLDS {
        let threshold = step as f64 * THRESHOLD_STEP;
        while cut < sorted.len() && sorted[cut].0 < threshold {
            cut += 1;
        }
        let tp = pos_suffix[cut];
        let fp = (sorted.len() - cut) - tp;
        let sensitivity = tp as f64 / n_positive as f64;
        let specificity = (n_negative - fp) as f64 / n_negative as f64;
        points.push(RocPoint {
            threshold,
            specificity,
            sensitivity,
        });
    }

    Ok(RocCurve {
        points,
        n_positive,
        n_negative,
    })
}

/// Trapezoidal area under the curve, integrating sensitivity against the
/// false-positive rate with (0,0) and (1,1) endpoints ensured.
pub fn auc_trapezoid(curve: &RocCurve) -> f64 {
    let mut xy: Vec<(f64, f64)> = curve
        .points
        .iter()
        .map(|p| (1.0 - p.specificity, p.sensitivity))
        .collect();
    xy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if xy.first() != Some(&(0.0, 0.0)) {
        xy.insert(0, (0.0, 0.0));
    }
    if xy.last() != Some(&(1.0, 1.0)) {
        xy.push((1.0, 1.0));
    }
    xy.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Maximum sensitivity over all swept thresholds whose specificity meets
/// the target; 0 when no threshold qualifies.
pub fn sensitivity_at_specificity(curve: &RocCurve, target: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.specificity >= target)
        .map(|p| p.sensitivity)
        .fold(0.0, f64::max)
}

/// Full challenge evaluation of a score set against labels.
pub fn evaluate(
    scores: &[ScoreRecord],
    labels: &HashMap<String, bool>,
) -> Result<EvalResult, MetricsError> {
    let curve = roc_curve(scores, labels)?;
    Ok(EvalResult {
        auc: auc_trapezoid(&curve),
        sens_at_95spec: sensitivity_at_specificity(&curve, 0.95),
        n_pos: curve.n_positive,
        n_neg: curve.n_negative,
    })
}
