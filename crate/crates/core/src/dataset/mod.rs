//! Manifest handling, curation rules, stratified subject-level folds,
//! class statistics, and the synthetic stand-in corpus.

mod synth;

pub use synth::{synth_corpus, SynthConfig};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Included recordings must be at least this long.
pub const MIN_DURATION_SECS: f64 = 0.5;
/// Train/validation folds in the challenge protocol.
pub const N_FOLDS: usize = 5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest line {line}: {detail}")]
    MalformedRow { line: usize, detail: String },
    #[error("duplicate entry for subject '{subject}' category '{category}'")]
    DuplicateEntry { subject: String, category: Category },
    #[error("subject '{subject}' has conflicting labels across categories")]
    ConflictingLabels { subject: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("audio synthesis: {0}")]
    Synthesis(String),
}

/// Sound category of a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Breathing,
    Cough,
    Speech,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Breathing, Category::Cough, Category::Speech];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Breathing => "breathing",
            Category::Cough => "cough",
            Category::Speech => "speech",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "breathing" => Ok(Category::Breathing),
            "cough" => Ok(Category::Cough),
            "speech" => Ok(Category::Speech),
            other => Err(format!("unknown category '{other}'")),
        }
    }
}

/// COVID status label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    NonCovid,
    Covid,
}

impl Label {
    pub fn as_u8(&self) -> u8 {
        match self {
            Label::NonCovid => 0,
            Label::Covid => 1,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::NonCovid => "NonCOVID",
            Label::Covid => "COVID",
        }
    }
}

/// One recording in a manifest. `label` is absent for blind test files.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub file_id: String,
    pub subject_id: String,
    pub category: Category,
    pub path: PathBuf,
    pub label: Option<Label>,
    pub duration: f64,
}

/// A row excluded by the curation rules rather than malformed.
#[derive(Debug, Clone)]
pub struct RejectedRow {
    pub line: usize,
    pub file_id: String,
    pub reason: String,
}

#[derive(Debug)]
pub struct ManifestParse {
    pub entries: Vec<ManifestEntry>,
    pub rejected: Vec<RejectedRow>,
}

const MANIFEST_HEADER: &str = "file_id,subject_id,category,path,label,duration";

/// Parse and validate a manifest CSV. Entries shorter than 500 ms are
/// excluded and reported; structural problems are hard errors.
///
/// Relative `path` values resolve against the manifest's directory.
pub fn parse_manifest(path: impl AsRef<Path>) -> Result<ManifestParse, DatasetError> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    match lines.next() {
        Some((_, header)) if header == MANIFEST_HEADER => {}
        Some((_, other)) => {
            return Err(DatasetError::MalformedRow {
                line: 1,
                detail: format!("expected header '{MANIFEST_HEADER}', found '{other}'"),
            })
        }
        None => {
            return Err(DatasetError::MalformedRow {
                line: 1,
                detail: "empty manifest".into(),
            })
        }
    }

    let mut entries = Vec::new();
    let mut rejected = Vec::new();
    let mut seen: BTreeSet<(String, Category)> = BTreeSet::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(DatasetError::MalformedRow {
                line: lineno,
                detail: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let category: Category = fields[2].parse().map_err(|e| DatasetError::MalformedRow {
            line: lineno,
            detail: e,
        })?;
        let label = match fields[4] {
            "" | "unknown" => None,
            "COVID" => Some(Label::Covid),
            "NonCOVID" => Some(Label::NonCovid),
            other => {
                return Err(DatasetError::MalformedRow {
                    line: lineno,
                    detail: format!("unknown label '{other}'"),
                })
            }
        };
        let duration: f64 = fields[5].parse().map_err(|_| DatasetError::MalformedRow {
            line: lineno,
            detail: format!("bad duration '{}'", fields[5]),
        })?;
        if !duration.is_finite() || duration < 0.0 {
            return Err(DatasetError::MalformedRow {
                line: lineno,
                detail: format!("bad duration '{duration}'"),
            });
        }
        let subject_id = fields[1].to_string();
        if !seen.insert((subject_id.clone(), category)) {
            return Err(DatasetError::DuplicateEntry {
                subject: subject_id,
                category,
            });
        }
        if duration < MIN_DURATION_SECS {
            rejected.push(RejectedRow {
                line: lineno,
                file_id: fields[0].to_string(),
                reason: format!("duration {duration} s below the 500 ms floor"),
            });
            continue;
        }
        let raw_path = PathBuf::from(fields[3]);
        let resolved = if raw_path.is_absolute() {
            raw_path
        } else {
            base.join(raw_path)
        };
        entries.push(ManifestEntry {
            file_id: fields[0].to_string(),
            subject_id,
            category,
            path: resolved,
            label,
            duration,
        });
    }
    Ok(ManifestParse { entries, rejected })
}

/// Write a manifest with paths relative to its directory when possible,
/// so a generated corpus is byte-identical for a given seed.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for e in entries {
        let rel = e.path.strip_prefix(base).unwrap_or(&e.path);
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.file_id,
            e.subject_id,
            e.category,
            rel.display(),
            e.label.map(|l| l.as_str()).unwrap_or(""),
            e.duration,
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Subject-level fold assignment: every category of a subject shares
/// its fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldAssignment {
    map: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.map.get(subject).copied()
    }

    pub fn subjects_in_fold(&self, fold: usize) -> Vec<&str> {
        self.map
            .iter()
            .filter(|(_, f)| **f == fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut out = String::from("subject_id,fold\n");
        for (subject, fold) in &self.map {
            out.push_str(&format!("{subject},{fold}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "subject_id,fold")) => {}
            other => {
                return Err(DatasetError::MalformedRow {
                    line: 1,
                    detail: format!("expected header 'subject_id,fold', found {other:?}"),
                })
            }
        }
        let mut map = BTreeMap::new();
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (subject, fold) = line.split_once(',').ok_or(DatasetError::MalformedRow {
                line: idx + 1,
                detail: "expected subject_id,fold".into(),
            })?;
            let fold: usize = fold.parse().map_err(|_| DatasetError::MalformedRow {
                line: idx + 1,
                detail: format!("bad fold '{fold}'"),
            })?;
            if fold >= N_FOLDS {
                return Err(DatasetError::MalformedRow {
                    line: idx + 1,
                    detail: format!("fold {fold} out of range"),
                });
            }
            map.insert(subject.to_string(), fold);
        }
        Ok(Self { map })
    }
}

/// Map each labeled subject to exactly one validation fold, stratified
/// by class: within each class the (sorted) subjects are shuffled by
/// the seed and dealt round-robin over the five folds.
pub fn make_folds(entries: &[ManifestEntry], seed: u64) -> Result<FoldAssignment, DatasetError> {
    let labels = subject_labels(entries)?;
    let mut by_class: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for (subject, label) in &labels {
        by_class[label.as_u8() as usize].push(subject);
    }
    for (idx, class) in by_class.iter().enumerate() {
        if class.len() < N_FOLDS {
            return Err(DatasetError::InsufficientData(format!(
                "class {idx} has {} subjects, need at least {N_FOLDS}",
                class.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = BTreeMap::new();
    for class in by_class.iter_mut() {
        class.sort_unstable();
        class.shuffle(&mut rng);
        for (i, subject) in class.iter().enumerate() {
            map.insert(subject.to_string(), i % N_FOLDS);
        }
    }
    Ok(FoldAssignment { map })
}

/// Labels per subject, enforcing consistency across categories.
pub fn subject_labels(entries: &[ManifestEntry]) -> Result<BTreeMap<String, Label>, DatasetError> {
    let mut labels: BTreeMap<String, Label> = BTreeMap::new();
    for e in entries {
        let Some(label) = e.label else { continue };
        match labels.get(&e.subject_id) {
            Some(existing) if *existing != label => {
                return Err(DatasetError::ConflictingLabels {
                    subject: e.subject_id.clone(),
                })
            }
            _ => {
                labels.insert(e.subject_id.clone(), label);
            }
        }
    }
    Ok(labels)
}

/// Split one category's labeled files into this fold's train and
/// validation sides.
pub fn split_for_fold<'a>(
    entries: &'a [ManifestEntry],
    folds: &FoldAssignment,
    fold: usize,
    category: Category,
) -> (Vec<&'a ManifestEntry>, Vec<&'a ManifestEntry>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for e in entries {
        if e.category != category || e.label.is_none() {
            continue;
        }
        match folds.fold_of(&e.subject_id) {
            Some(f) if f == fold => val.push(e),
            Some(_) => train.push(e),
            None => {}
        }
    }
    (train, val)
}

/// Subject and per-category file counts by class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub n_subjects: usize,
    pub n_positive_subjects: usize,
    pub n_unlabeled_subjects: usize,
    pub per_category: BTreeMap<Category, CategoryStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CategoryStats {
    pub n_files: usize,
    pub n_positive: usize,
}

impl ClassStats {
    pub fn positive_fraction(&self) -> f64 {
        if self.n_subjects == 0 {
            0.0
        } else {
            self.n_positive_subjects as f64 / self.n_subjects as f64
        }
    }
}

impl fmt::Display for ClassStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "subjects: {} ({} COVID, {:.1}% positive, {} unlabeled)",
            self.n_subjects,
            self.n_positive_subjects,
            100.0 * self.positive_fraction(),
            self.n_unlabeled_subjects,
        )?;
        for (cat, stats) in &self.per_category {
            writeln!(
                f,
                "  {cat}: {} files ({} COVID)",
                stats.n_files, stats.n_positive
            )?;
        }
        Ok(())
    }
}

pub fn class_stats(entries: &[ManifestEntry]) -> ClassStats {
    let mut subjects: HashMap<&str, Option<Label>> = HashMap::new();
    let mut per_category: BTreeMap<Category, CategoryStats> = BTreeMap::new();
    for e in entries {
        let slot = subjects.entry(&e.subject_id).or_insert(e.label);
        if slot.is_none() {
            *slot = e.label;
        }
        let cat = per_category.entry(e.category).or_insert(CategoryStats {
            n_files: 0,
            n_positive: 0,
        });
        cat.n_files += 1;
        if e.label == Some(Label::Covid) {
            cat.n_positive += 1;
        }
    }
    let labeled = subjects.values().filter(|l| l.is_some()).count();
    ClassStats {
        n_subjects: labeled,
        n_positive_subjects: subjects
            .values()
            .filter(|l| **l == Some(Label::Covid))
            .count(),
        n_unlabeled_subjects: subjects.len() - labeled,
        per_category,
    }
}
