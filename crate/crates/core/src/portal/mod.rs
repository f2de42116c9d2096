//! Submission-scoring service: validation, ticket accounting, metric
//! computation against held-out labels, and a leaderboard derived from
//! an append-only journal.
//!
//! The journal is the only persistent state; the board is always
//! recomputed from it, so replaying the file reconstructs the service
//! exactly. Labels never leave the service — only aggregate metrics do.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::inference::{parse_score_csv, ScoreError, ScoreRecord};
use crate::metrics::{self, EvalResult, MetricsError};

/// Default scoring tickets per team and track.
pub const DEFAULT_TICKET_LIMIT: u32 = 15;

/// Leaderboard track: one per sound category plus fusion.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Track {
    Breathing,
    Cough,
    Speech,
    Fusion,
}

impl Track {
    pub const ALL: [Track; 4] = [Track::Breathing, Track::Cough, Track::Speech, Track::Fusion];

    pub fn as_str(&self) -> &'static str {
        match self {
            Track::Breathing => "breathing",
            Track::Cough => "cough",
            Track::Speech => "speech",
            Track::Fusion => "fusion",
        }
    }
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Track {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "breathing" => Ok(Track::Breathing),
            "cough" => Ok(Track::Cough),
            "speech" => Ok(Track::Speech),
            "fusion" => Ok(Track::Fusion),
            other => Err(format!("unknown track '{other}'")),
        }
    }
}

/// Why a submission was rejected at validation. Rejections never
/// consume a ticket.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum Rejection {
    MissingFiles { files: Vec<String> },
    ExtraFiles { files: Vec<String> },
    OutOfRangeScore { file_id: String, value: f64 },
    MalformedCsv { detail: String },
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::MissingFiles { files } => {
                write!(f, "missing files: {}", files.join(", "))
            }
            Rejection::ExtraFiles { files } => write!(f, "extra files: {}", files.join(", ")),
            Rejection::OutOfRangeScore { file_id, value } => {
                write!(f, "score {value} for '{file_id}' outside [0, 1]")
            }
            Rejection::MalformedCsv { detail } => write!(f, "malformed csv: {detail}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum PortalError {
    #[error("track '{0}' is not configured")]
    UnknownTrack(Track),
    #[error("team '{0}' is not registered")]
    UnknownTeam(String),
    #[error("team '{team}' exhausted its {limit} tickets for track '{track}'")]
    TicketLimitExceeded {
        team: String,
        track: Track,
        limit: u32,
    },
    #[error("submission rejected: {0}")]
    Rejected(Rejection),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("portal configuration: {0}")]
    Config(String),
    #[error("journal i/o: {0}")]
    Journal(#[from] std::io::Error),
    #[error("corrupt journal line {line}: {detail}")]
    CorruptJournal { line: usize, detail: String },
}

/// Held-out ground truth for one track.
#[derive(Debug, Clone)]
pub struct TrackSetup {
    pub test_files: Vec<String>,
    labels: HashMap<String, bool>,
}

impl TrackSetup {
    /// Every test file must have a label.
    pub fn new(
        test_files: Vec<String>,
        labels: HashMap<String, bool>,
    ) -> Result<Self, PortalError> {
        for id in &test_files {
            if !labels.contains_key(id) {
                return Err(PortalError::Config(format!("no label for test file '{id}'")));
            }
        }
        let unique: BTreeSet<&String> = test_files.iter().collect();
        if unique.len() != test_files.len() {
            return Err(PortalError::Config("duplicate ids in test list".into()));
        }
        Ok(Self { test_files, labels })
    }
}

/// One accepted submission, exactly as journaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub seq: u64,
    pub team: String,
    pub track: Track,
    pub received_at_ms: u64,
    pub ticket: u32,
    /// sha-256 of the submitted csv bytes.
    pub digest: String,
    pub auc: f64,
    pub sens_at_95spec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub team: String,
    pub track: Track,
    pub best_auc: f64,
    pub best_sens_at_95spec: f64,
    pub n_submissions: u32,
    /// When the best (auc, sensitivity) pair was first achieved.
    pub achieved_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubmitOutcome {
    pub result: EvalResult,
    pub ticket: u32,
    pub rank: usize,
}

/// The scoring service. All state is derived from the accepted-
/// submission history; `journal_path`, when set, persists that history
/// as line-delimited JSON.
pub struct PortalService {
    tracks: BTreeMap<Track, TrackSetup>,
    ticket_limit: u32,
    teams: BTreeSet<String>,
    history: Vec<SubmissionRecord>,
    journal_path: Option<PathBuf>,
}

impl PortalService {
    pub fn new(tracks: BTreeMap<Track, TrackSetup>, ticket_limit: u32) -> Self {
        Self {
            tracks,
            ticket_limit,
            teams: BTreeSet::new(),
            history: Vec::new(),
            journal_path: None,
        }
    }

    /// Attach a journal file, replaying it first when it exists.
    pub fn with_journal(mut self, path: impl Into<PathBuf>) -> Result<Self, PortalError> {
        let path = path.into();
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            for (idx, line) in text.lines().enumerate() {
                if line.is_empty() {
                    continue;
                }
                let record: SubmissionRecord =
                    serde_json::from_str(line).map_err(|e| PortalError::CorruptJournal {
                        line: idx + 1,
                        detail: e.to_string(),
                    })?;
                self.teams.insert(record.team.clone());
                self.history.push(record);
            }
        }
        self.journal_path = Some(path);
        Ok(self)
    }

    pub fn register(&mut self, team: &str) {
        self.teams.insert(team.to_string());
    }

    pub fn is_registered(&self, team: &str) -> bool {
        self.teams.contains(team)
    }

    pub fn history(&self, team: &str) -> Vec<&SubmissionRecord> {
        self.history.iter().filter(|r| r.team == team).collect()
    }

    pub fn tickets_used(&self, team: &str, track: Track) -> u32 {
        self.history
            .iter()
            .filter(|r| r.team == team && r.track == track)
            .count() as u32
    }

    /// Parse and check a score file against the track's test list.
    /// Structural and coverage problems map to distinct rejection codes.
    pub fn validate_submission(
        &self,
        track: Track,
        csv_text: &str,
    ) -> Result<Vec<ScoreRecord>, PortalError> {
        let setup = self
            .tracks
            .get(&track)
            .ok_or(PortalError::UnknownTrack(track))?;
        let records = parse_score_csv(csv_text).map_err(|e| {
            PortalError::Rejected(match e {
                ScoreError::OutOfRange { file_id, value } => {
                    Rejection::OutOfRangeScore { file_id, value }
                }
                other => Rejection::MalformedCsv {
                    detail: other.to_string(),
                },
            })
        })?;

        let expected: BTreeSet<&str> = setup.test_files.iter().map(String::as_str).collect();
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let mut extra = Vec::new();
        for rec in &records {
            if !expected.contains(rec.file_id.as_str()) || !seen.insert(rec.file_id.as_str()) {
                extra.push(rec.file_id.clone());
            }
        }
        if !extra.is_empty() {
            return Err(PortalError::Rejected(Rejection::ExtraFiles { files: extra }));
        }
        let missing: Vec<String> = expected
            .iter()
            .filter(|id| !seen.contains(**id))
            .map(|id| id.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(PortalError::Rejected(Rejection::MissingFiles {
                files: missing,
            }));
        }
        Ok(records)
    }

    /// Score an accepted submission, consume a ticket, journal it, and
    /// report the team's resulting rank.
    pub fn submit(
        &mut self,
        team: &str,
        track: Track,
        csv_text: &str,
        received_at_ms: u64,
    ) -> Result<SubmitOutcome, PortalError> {
        if !self.is_registered(team) {
            return Err(PortalError::UnknownTeam(team.to_string()));
        }
        let records = self.validate_submission(track, csv_text)?;
        let used = self.tickets_used(team, track);
        if used >= self.ticket_limit {
            return Err(PortalError::TicketLimitExceeded {
                team: team.to_string(),
                track,
                limit: self.ticket_limit,
            });
        }

        let setup = &self.tracks[&track];
        let result = metrics::evaluate(&records, &setup.labels)?;
        let record = SubmissionRecord {
            seq: self.history.len() as u64 + 1,
            team: team.to_string(),
            track,
            received_at_ms,
            ticket: used + 1,
            digest: hex_digest(csv_text.as_bytes()),
            auc: result.auc,
            sens_at_95spec: result.sens_at_95spec,
        };
        if let Some(path) = &self.journal_path {
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)?;
            writeln!(f, "{}", serde_json::to_string(&record).expect("serializable"))?;
        }
        self.history.push(record);

        let rank = self
            .leaderboard(track)
            .into_iter()
            .find(|row| row.team == team)
            .map(|row| row.rank)
            .unwrap_or(0);
        Ok(SubmitOutcome {
            result,
            ticket: used + 1,
            rank,
        })
    }

    /// Rows sorted by best AUC descending; ties broken by sensitivity
    /// at 95% specificity, then by earliest achievement time.
    pub fn leaderboard(&self, track: Track) -> Vec<LeaderboardRow> {
        struct Best {
            auc: f64,
            sens: f64,
            at: u64,
            n: u32,
        }
        let mut per_team: BTreeMap<&str, Best> = BTreeMap::new();
        for rec in self.history.iter().filter(|r| r.track == track) {
            let entry = per_team.entry(&rec.team).or_insert(Best {
                auc: f64::NEG_INFINITY,
                sens: f64::NEG_INFINITY,
                at: rec.received_at_ms,
                n: 0,
            });
            entry.n += 1;
            if (rec.auc, rec.sens_at_95spec) > (entry.auc, entry.sens) {
                entry.auc = rec.auc;
                entry.sens = rec.sens_at_95spec;
                entry.at = rec.received_at_ms;
            }
        }
        let mut rows: Vec<LeaderboardRow> = per_team
            .into_iter()
            .map(|(team, b)| LeaderboardRow {
                rank: 0,
                team: team.to_string(),
                track,
                best_auc: b.auc,
                best_sens_at_95spec: b.sens,
                n_submissions: b.n,
                achieved_at_ms: b.at,
            })
            .collect();
        rows.sort_by(|a, b| {
            b.best_auc
                .total_cmp(&a.best_auc)
                .then(b.best_sens_at_95spec.total_cmp(&a.best_sens_at_95spec))
                .then(a.achieved_at_ms.cmp(&b.achieved_at_ms))
                .then(a.team.cmp(&b.team))
        });
        for (i, row) in rows.iter_mut().enumerate() {
            row.rank = i + 1;
        }
        rows
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

/// Read a `file_id,label` CSV with labels in {0,1}.
pub fn read_label_csv(path: impl AsRef<Path>) -> Result<HashMap<String, bool>, PortalError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "file_id,label")) => {}
        other => {
            return Err(PortalError::Config(format!(
                "expected header 'file_id,label', found {other:?}"
            )))
        }
    }
    let mut labels = HashMap::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let (id, label) = line.split_once(',').ok_or_else(|| {
            PortalError::Config(format!("label line {}: expected file_id,label", idx + 1))
        })?;
        let value = match label.trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(PortalError::Config(format!(
                    "label line {}: label '{other}' not in {{0,1}}",
                    idx + 1
                )))
            }
        };
        labels.insert(id.to_string(), value);
    }
    Ok(labels)
}

pub fn write_label_csv(
    path: impl AsRef<Path>,
    labels: &BTreeMap<String, bool>,
) -> Result<(), PortalError> {
    let mut out = String::from("file_id,label\n");
    for (id, label) in labels {
        out.push_str(&format!("{id},{}\n", u8::from(*label)));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a test list: one file id per line.
pub fn read_test_list(path: impl AsRef<Path>) -> Result<Vec<String>, PortalError> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::score_csv_to_string;

    fn setup_service() -> PortalService {
        let files: Vec<String> = (0..6).map(|i| format!("f{i}")).collect();
        let labels: HashMap<String, bool> = files
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i < 2))
            .collect();
        let mut tracks = BTreeMap::new();
        tracks.insert(
            Track::Cough,
            TrackSetup::new(files.clone(), labels.clone()).unwrap(),
        );
        tracks.insert(Track::Breathing, TrackSetup::new(files, labels).unwrap());
        let mut service = PortalService::new(tracks, 15);
        service.register("alpha");
        service.register("beta");
        service
    }

    fn scores(values: &[f64]) -> String {
        let records: Vec<ScoreRecord> = values
            .iter()
            .enumerate()
            .map(|(i, v)| ScoreRecord::new(format!("f{i}"), *v).unwrap())
            .collect();
        score_csv_to_string(&records)
    }

    fn perfect() -> String {
        scores(&[1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    }

    #[test]
    fn perfect_submission_scores_auc_one_and_ranks_first() {
        let mut service = setup_service();
        let outcome = service.submit("alpha", Track::Cough, &perfect(), 1).unwrap();
        assert_eq!(outcome.result.auc, 1.0);
        assert_eq!(outcome.result.sens_at_95spec, 1.0);
        assert_eq!(outcome.ticket, 1);
        assert_eq!(outcome.rank, 1);
    }

    #[test]
    fn sixteenth_accepted_submission_is_rejected() {
        let mut service = setup_service();
        for i in 0..15 {
            let outcome = service
                .submit("alpha", Track::Cough, &perfect(), i)
                .unwrap();
            assert_eq!(outcome.ticket, i as u32 + 1);
        }
        assert!(matches!(
            service.submit("alpha", Track::Cough, &perfect(), 99),
            Err(PortalError::TicketLimitExceeded { .. })
        ));
        // other tracks and teams are unaffected
        assert!(service.submit("alpha", Track::Breathing, &perfect(), 100).is_ok());
        assert!(service.submit("beta", Track::Cough, &perfect(), 101).is_ok());
    }

    #[test]
    fn rejections_do_not_consume_tickets() {
        let mut service = setup_service();
        let missing = scores(&[1.0, 1.0, 0.0, 0.0, 0.0]); // f5 absent
        match service.submit("alpha", Track::Cough, &missing, 1) {
            Err(PortalError::Rejected(Rejection::MissingFiles { files })) => {
                assert_eq!(files, vec!["f5".to_string()])
            }
            other => panic!("expected MissingFiles, got {other:?}"),
        }
        let bad_score = "file_id,score\nf0,1.2\nf1,0.5\nf2,0.5\nf3,0.5\nf4,0.5\nf5,0.5\n";
        assert!(matches!(
            service.submit("alpha", Track::Cough, bad_score, 2),
            Err(PortalError::Rejected(Rejection::OutOfRangeScore { .. }))
        ));
        let malformed = "totally,not\na score file\n";
        assert!(matches!(
            service.submit("alpha", Track::Cough, malformed, 3),
            Err(PortalError::Rejected(Rejection::MalformedCsv { .. }))
        ));
        let extra = perfect() + "f9,0.5\n";
        assert!(matches!(
            service.submit("alpha", Track::Cough, &extra, 4),
            Err(PortalError::Rejected(Rejection::ExtraFiles { .. }))
        ));
        let duplicate = perfect() + "f0,0.5\n";
        assert!(matches!(
            service.submit("alpha", Track::Cough, &duplicate, 5),
            Err(PortalError::Rejected(Rejection::ExtraFiles { .. }))
        ));
        assert_eq!(service.tickets_used("alpha", Track::Cough), 0);
    }

    #[test]
    fn unregistered_team_is_refused() {
        let mut service = setup_service();
        assert!(matches!(
            service.submit("ghost", Track::Cough, &perfect(), 1),
            Err(PortalError::UnknownTeam(_))
        ));
    }

    #[test]
    fn board_orders_by_auc_then_sensitivity_then_time() {
        let mut service = setup_service();
        // alpha: separable but imperfect; beta: perfect
        service
            .submit("alpha", Track::Cough, &scores(&[0.9, 0.4, 0.5, 0.1, 0.2, 0.3]), 1)
            .unwrap();
        service.submit("beta", Track::Cough, &perfect(), 2).unwrap();
        let board = service.leaderboard(Track::Cough);
        assert_eq!(board[0].team, "beta");
        assert_eq!(board[0].rank, 1);
        assert_eq!(board[1].team, "alpha");

        // equal AUC/sens: the earlier achiever ranks first
        let mut tie = setup_service();
        tie.submit("beta", Track::Cough, &perfect(), 5).unwrap();
        tie.submit("alpha", Track::Cough, &perfect(), 9).unwrap();
        let board = tie.leaderboard(Track::Cough);
        assert_eq!(board[0].team, "beta");
        assert_eq!(board[0].achieved_at_ms, 5);
    }

    #[test]
    fn best_row_tracks_the_maximum_auc() {
        let mut service = setup_service();
        service
            .submit("alpha", Track::Cough, &scores(&[0.9, 0.4, 0.5, 0.1, 0.2, 0.3]), 1)
            .unwrap();
        service.submit("alpha", Track::Cough, &perfect(), 2).unwrap();
        service
            .submit("alpha", Track::Cough, &scores(&[0.5, 0.5, 0.5, 0.5, 0.5, 0.5]), 3)
            .unwrap();
        let board = service.leaderboard(Track::Cough);
        assert_eq!(board[0].best_auc, 1.0);
        assert_eq!(board[0].n_submissions, 3);
        assert_eq!(board[0].achieved_at_ms, 2);
    }

    #[test]
    fn journal_replay_reconstructs_the_identical_board() {
        let dir = tempfile::tempdir().unwrap();
        let journal = dir.path().join("journal.ndjson");

        let mut service = setup_service().with_journal(&journal).unwrap();
        service
            .submit("alpha", Track::Cough, &scores(&[0.9, 0.4, 0.5, 0.1, 0.2, 0.3]), 10)
            .unwrap();
        service.submit("beta", Track::Cough, &perfect(), 11).unwrap();
        service
            .submit("alpha", Track::Breathing, &perfect(), 12)
            .unwrap();
        let board_before = service.leaderboard(Track::Cough);
        let history_before: Vec<SubmissionRecord> =
            service.history("alpha").into_iter().cloned().collect();
        drop(service);

        let replayed = setup_service().with_journal(&journal).unwrap();
        assert_eq!(replayed.leaderboard(Track::Cough), board_before);
        let history_after: Vec<SubmissionRecord> =
            replayed.history("alpha").into_iter().cloned().collect();
        assert_eq!(history_after, history_before);
        assert_eq!(replayed.tickets_used("alpha", Track::Cough), 1);
        assert_eq!(replayed.tickets_used("beta", Track::Cough), 1);
    }

    #[test]
    fn label_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let labels: BTreeMap<String, bool> =
            [("a".to_string(), true), ("b".to_string(), false)].into();
        write_label_csv(&path, &labels).unwrap();
        let back = read_label_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back["a"], true);
        assert_eq!(back["b"], false);
    }
}
