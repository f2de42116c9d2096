//! File-level scoring, fold ensembling, category fusion, submission
//! pooling, and the score CSV wire format shared with the portal.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use thiserror::Error;

use crate::dataset::Category;
use crate::features::FeatureMatrix;
use crate::model::{ModelError, NetworkParams};
use crate::training::chunks;

/// Fold models in one ensemble, fixed by the challenge protocol.
pub const ENSEMBLE_SIZE: usize = 5;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("score {value} for '{file_id}' outside [0, 1]")]
    OutOfRange { file_id: String, value: f64 },
    #[error("ensemble needs exactly {expected} checkpoints, found {found}")]
    IncompleteEnsemble { expected: usize, found: usize },
    #[error("subject '{subject}' is missing category '{missing}'")]
    IncompleteFusion { subject: String, missing: Category },
    #[error("submissions cover different file sets: {0}")]
    CoverageMismatch(String),
    #[error("malformed score csv: {0}")]
    MalformedCsv(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("score file i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-file COVID probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub file_id: String,
    pub probability: f64,
}

impl ScoreRecord {
    pub fn new(file_id: impl Into<String>, probability: f64) -> Result<Self, ScoreError> {
        let file_id = file_id.into();
        if !(0.0..=1.0).contains(&probability) || probability.is_nan() {
            return Err(ScoreError::OutOfRange {
                file_id,
                value: probability,
            });
        }
        Ok(Self {
            file_id,
            probability,
        })
    }
}

/// Probabilities of every chunk of one file plus their mean.
pub fn score_file_chunks(
    params: &NetworkParams,
    feat: &FeatureMatrix,
) -> Result<(Vec<f64>, f64), ScoreError> {
    let probs = chunks::score_chunks(params, &feat.values)?;
    let mean = probs.iter().sum::<f64>() / probs.len() as f64;
    Ok((probs, mean))
}

/// File score: the mean of the per-chunk probabilities, chunks built
/// exactly as in training (width 51, stride 10, reflect padding).
pub fn score_file(params: &NetworkParams, feat: &FeatureMatrix) -> Result<ScoreRecord, ScoreError> {
    let (_, mean) = score_file_chunks(params, feat)?;
    ScoreRecord::new(feat.source_id.clone(), mean)
}

/// Fold ensemble: the mean of the five per-fold file scores.
pub fn ensemble_score(
    models: &[NetworkParams],
    feat: &FeatureMatrix,
) -> Result<ScoreRecord, ScoreError> {
    if models.len() != ENSEMBLE_SIZE {
        return Err(ScoreError::IncompleteEnsemble {
            expected: ENSEMBLE_SIZE,
            found: models.len(),
        });
    }
    let mut sum = 0.0;
    for params in models {
        sum += score_file(params, feat)?.probability;
    }
    ScoreRecord::new(feat.source_id.clone(), sum / models.len() as f64)
}

/// Subject-level fusion: the unweighted mean over the three sound
/// categories.
pub fn fuse_categories(
    subject_id: &str,
    per_category: &BTreeMap<Category, f64>,
) -> Result<ScoreRecord, ScoreError> {
    for cat in [Category::Breathing, Category::Cough, Category::Speech] {
        if !per_category.contains_key(&cat) {
            return Err(ScoreError::IncompleteFusion {
                subject: subject_id.to_string(),
                missing: cat,
            });
        }
    }
    let mean = per_category.values().sum::<f64>() / per_category.len() as f64;
    ScoreRecord::new(subject_id, mean)
}

/// Pool score sets over the same file list: min-max normalize each
/// submission to [0, 1] (a constant submission maps to all 0.5), then
/// average per file. Output keeps the first submission's file order.
pub fn pool_submissions(submissions: &[Vec<ScoreRecord>]) -> Result<Vec<ScoreRecord>, ScoreError> {
    let Some(first) = submissions.first() else {
        return Err(ScoreError::CoverageMismatch("no submissions".into()));
    };
    let reference: BTreeSet<&str> = first.iter().map(|r| r.file_id.as_str()).collect();
    if reference.len() != first.len() {
        return Err(ScoreError::CoverageMismatch("duplicate file ids".into()));
    }

    let mut pooled: HashMap<&str, f64> = HashMap::new();
    for (i, sub) in submissions.iter().enumerate() {
        let ids: BTreeSet<&str> = sub.iter().map(|r| r.file_id.as_str()).collect();
        if ids != reference || sub.len() != first.len() {
            return Err(ScoreError::CoverageMismatch(format!(
                "submission {i} covers a different file set"
            )));
        }
        let lo = sub.iter().map(|r| r.probability).fold(f64::INFINITY, f64::min);
        let hi = sub
            .iter()
            .map(|r| r.probability)
            .fold(f64::NEG_INFINITY, f64::max);
        for rec in sub {
            let normalized = if hi > lo {
                (rec.probability - lo) / (hi - lo)
            } else {
                0.5
            };
            *pooled.entry(rec.file_id.as_str()).or_insert(0.0) += normalized;
        }
    }

    first
        .iter()
        .map(|rec| {
            ScoreRecord::new(
                rec.file_id.clone(),
                pooled[rec.file_id.as_str()] / submissions.len() as f64,
            )
        })
        .collect()
}

/// Render a score with at least 6 significant digits as plain decimal
/// text.
pub fn format_score(score: f64) -> String {
    if score <= 0.0 {
        return "0.000000".into();
    }
    // zeros between the decimal point and the first significant digit
    let leading_zeros = ((-score.log10()).ceil() as i64 - 1).max(0) as usize;
    format!("{score:.*}", 6 + leading_zeros)
}

/// Serialize records in the submission wire format: header
/// `file_id,score`, one row per file, LF endings.
pub fn score_csv_to_string(records: &[ScoreRecord]) -> String {
    let mut out = String::from("file_id,score\n");
    for rec in records {
        out.push_str(&rec.file_id);
        out.push(',');
        out.push_str(&format_score(rec.probability));
        out.push('\n');
    }
    out
}

pub fn write_score_csv(path: impl AsRef<Path>, records: &[ScoreRecord]) -> Result<(), ScoreError> {
    std::fs::write(path, score_csv_to_string(records))?;
    Ok(())
}

/// Strict parse of the submission format. Structural problems are
/// `MalformedCsv`; scores outside [0, 1] are rejected, not clipped.
pub fn parse_score_csv(text: &str) -> Result<Vec<ScoreRecord>, ScoreError> {
    let mut lines = text.lines();
    match lines.next() {
        Some("file_id,score") => {}
        Some(other) => {
            return Err(ScoreError::MalformedCsv(format!(
                "expected header 'file_id,score', found '{other}'"
            )))
        }
        None => return Err(ScoreError::MalformedCsv("empty file".into())),
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let Some((id, score_text)) = line.split_once(',') else {
            return Err(ScoreError::MalformedCsv(format!(
                "line {}: expected 'file_id,score'",
                i + 2
            )));
        };
        if id.is_empty() {
            return Err(ScoreError::MalformedCsv(format!(
                "line {}: empty file id",
                i + 2
            )));
        }
        let value: f64 = score_text.trim().parse().map_err(|_| {
            ScoreError::MalformedCsv(format!("line {}: unparseable score '{score_text}'", i + 2))
        })?;
        records.push(ScoreRecord::new(id, value)?);
    }
    Ok(records)
}

pub fn read_score_csv(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>, ScoreError> {
    parse_score_csv(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn recs(scores: &[(&str, f64)]) -> Vec<ScoreRecord> {
        scores
            .iter()
            .map(|(id, p)| ScoreRecord::new(*id, *p).unwrap())
            .collect()
    }

    #[test]
    fn fusion_is_the_arithmetic_mean() {
        let mut per_cat = BTreeMap::new();
        per_cat.insert(Category::Breathing, 0.9);
        per_cat.insert(Category::Cough, 0.6);
        per_cat.insert(Category::Speech, 0.6);
        let fused = fuse_categories("subj", &per_cat).unwrap();
        assert!((fused.probability - 0.7).abs() < 1e-12);
    }

    #[test]
    fn fusion_of_identical_scores_is_identity_and_bounded() {
        let mut per_cat = BTreeMap::new();
        for cat in [Category::Breathing, Category::Cough, Category::Speech] {
            per_cat.insert(cat, 0.42);
        }
        assert_eq!(fuse_categories("s", &per_cat).unwrap().probability, 0.42);

        per_cat.insert(Category::Breathing, 0.1);
        per_cat.insert(Category::Cough, 0.9);
        let fused = fuse_categories("s", &per_cat).unwrap().probability;
        assert!(fused >= 0.1 && fused <= 0.9);
    }

    #[test]
    fn fusion_requires_all_three_categories() {
        let mut per_cat = BTreeMap::new();
        per_cat.insert(Category::Breathing, 0.5);
        per_cat.insert(Category::Speech, 0.5);
        assert!(matches!(
            fuse_categories("s", &per_cat),
            Err(ScoreError::IncompleteFusion {
                missing: Category::Cough,
                ..
            })
        ));
    }

    #[test]
    fn pooling_constant_submissions_gives_one_half() {
        let a = recs(&[("f1", 0.2), ("f2", 0.2)]);
        let b = recs(&[("f1", 0.8), ("f2", 0.8)]);
        let pooled = pool_submissions(&[a, b]).unwrap();
        assert!(pooled.iter().all(|r| r.probability == 0.5));
    }

    #[test]
    fn pooling_identical_submissions_preserves_ranking() {
        let a = recs(&[("f1", 0.9), ("f2", 0.3), ("f3", 0.6)]);
        let pooled = pool_submissions(&[a.clone(), a.clone()]).unwrap();
        let rank = |rs: &[ScoreRecord]| {
            let mut sorted: Vec<(&str, f64)> =
                rs.iter().map(|r| (r.file_id.as_str(), r.probability)).collect();
            sorted.sort_by(|x, y| y.1.total_cmp(&x.1));
            sorted.into_iter().map(|(id, _)| id).collect::<Vec<_>>().join(",")
        };
        assert_eq!(rank(&a), rank(&pooled));
    }

    #[test]
    fn pooling_matches_a_brute_force_normalize_then_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let ids: Vec<String> = (0..20).map(|i| format!("f{i:02}")).collect();
        let subs: Vec<Vec<ScoreRecord>> = (0..3)
            .map(|_| {
                ids.iter()
                    .map(|id| ScoreRecord::new(id.clone(), rng.random::<f64>()).unwrap())
                    .collect()
            })
            .collect();
        let pooled = pool_submissions(&subs).unwrap();

        // independent two-pass oracle per file
        for (k, id) in ids.iter().enumerate() {
            let mut acc = 0.0;
            for sub in &subs {
                let vals: Vec<f64> = sub.iter().map(|r| r.probability).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                acc += (vals[k] - lo) / (hi - lo);
            }
            let expect = acc / 3.0;
            let got = pooled.iter().find(|r| &r.file_id == id).unwrap().probability;
            assert!((got - expect).abs() < 1e-12);
        }

        let labels: std::collections::HashMap<String, bool> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i % 3 == 0))
            .collect();
        let got = metrics::evaluate(&pooled, &labels).unwrap();
        assert!(got.auc >= 0.0 && got.auc <= 1.0);
    }

    #[test]
    fn pooling_rejects_mismatched_coverage() {
        let a = recs(&[("f1", 0.2), ("f2", 0.4)]);
        let b = recs(&[("f1", 0.8), ("f3", 0.1)]);
        assert!(matches!(
            pool_submissions(&[a, b]),
            Err(ScoreError::CoverageMismatch(_))
        ));
    }

    #[test]
    fn score_format_has_six_significant_digits() {
        assert_eq!(format_score(0.5), "0.500000");
        assert_eq!(format_score(1.0), "1.000000");
        assert_eq!(format_score(0.0), "0.000000");
        assert_eq!(format_score(0.001234567), "0.00123457");
        assert_eq!(format_score(0.1), "0.100000");
    }

    #[test]
    fn csv_roundtrip_preserves_scores() {
        let records = recs(&[("a", 0.25), ("b", 1.0), ("c", 0.000125)]);
        let text = score_csv_to_string(&records);
        assert!(text.starts_with("file_id,score\n"));
        assert!(!text.contains('\r'));
        let back = parse_score_csv(&text).unwrap();
        for (x, y) in back.iter().zip(records.iter()) {
            assert_eq!(x.file_id, y.file_id);
            assert!((x.probability - y.probability).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_rejects_bad_header_and_out_of_range() {
        assert!(matches!(
            parse_score_csv("id,prob\na,0.5\n"),
            Err(ScoreError::MalformedCsv(_))
        ));
        assert!(matches!(
            parse_score_csv("file_id,score\na,1.2\n"),
            Err(ScoreError::OutOfRange { .. })
        ));
        assert!(matches!(
            parse_score_csv("file_id,score\na,oops\n"),
            Err(ScoreError::MalformedCsv(_))
        ));
    }

    #[test]
    fn record_construction_validates_range() {
        assert!(ScoreRecord::new("x", -0.01).is_err());
        assert!(ScoreRecord::new("x", f64::NAN).is_err());
        assert!(ScoreRecord::new("x", 0.0).is_ok());
        assert!(ScoreRecord::new("x", 1.0).is_ok());
    }
}
