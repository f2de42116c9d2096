//! Portal configuration file: key=value lines.
//!
//! ```text
//! ticket_limit=15
//! journal=journal.ndjson
//! test_list.cough=cough_files.txt
//! labels.cough=cough_labels.csv
//! ```
//!
//! Relative paths resolve against the config file's directory. Tracks
//! without both a test list and labels are closed. The journal is
//! optional; without it the service is in-memory only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use auscult::portal::{
    read_label_csv, read_test_list, PortalService, Track, TrackSetup, DEFAULT_TICKET_LIMIT,
};

#[derive(Debug, Default)]
pub struct PortalConfig {
    pub ticket_limit: Option<u32>,
    pub journal: Option<PathBuf>,
    pub test_lists: BTreeMap<Track, PathBuf>,
    pub labels: BTreeMap<Track, PathBuf>,
}

impl PortalConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut config = Self::default();
        let resolve = |value: &str| -> PathBuf {
            let p = PathBuf::from(value);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("portal config line {}: expected key=value", lineno + 1);
            };
            let (key, value) = (key.trim(), value.trim());
            match key.split_once('.') {
                Some(("test_list", track)) => {
                    let track: Track = track.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
                    config.test_lists.insert(track, resolve(value));
                }
                Some(("labels", track)) => {
                    let track: Track = track.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
                    config.labels.insert(track, resolve(value));
                }
                None if key == "ticket_limit" => {
                    config.ticket_limit = Some(value.parse().context("bad ticket_limit")?);
                }
                None if key == "journal" => {
                    config.journal = Some(resolve(value));
                }
                _ => bail!("portal config line {}: unknown key '{key}'", lineno + 1),
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read portal config '{}'", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Build the service: load per-track test lists and labels, attach
    /// the journal (replaying an existing one).
    pub fn into_service(self) -> Result<PortalService> {
        let mut tracks = BTreeMap::new();
        for (track, list_path) in &self.test_lists {
            let labels_path = self
                .labels
                .get(track)
                .with_context(|| format!("track '{track}' has a test list but no labels"))?;
            let test_files = read_test_list(list_path)?;
            let labels = read_label_csv(labels_path)?;
            tracks.insert(*track, TrackSetup::new(test_files, labels)?);
        }
        if tracks.is_empty() {
            bail!("portal config defines no tracks");
        }
        let mut service =
            PortalService::new(tracks, self.ticket_limit.unwrap_or(DEFAULT_TICKET_LIMIT));
        if let Some(journal) = self.journal {
            service = service.with_journal(journal)?;
        }
        Ok(service)
    }
}
