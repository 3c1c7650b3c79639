use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Event, Session, SessionError};

#[derive(Debug, Serialize, Deserialize)]
struct JournalLine {
    seq: u64,
    #[serde(flatten)]
    event: Event,
}

/// Result of re-deriving every artifact of a session from its journal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub session_id: String,
    pub events: usize,
    pub versions_checked: Vec<u32>,
    /// Versions whose stored artifact file differs from the replayed bytes.
    pub file_mismatches: Vec<u32>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.file_mismatches.is_empty()
    }
}

/// One directory per session: `journal.jsonl`, `artifacts/<sha256>.py`
/// and `reports/`.
#[derive(Debug)]
pub struct SessionStore {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

pub(crate) fn validate_id(id: &str) -> Result<(), SessionError> {
    let ok = !id.is_empty()
        && id.len() <= 200
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_'));
    if ok {
        Ok(())
    } else {
        Err(SessionError::InvalidId(id.to_string()))
    }
}

impl SessionStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, SessionError> {
        let root = root.into();
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Self {
            root,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    fn journal_path(&self, id: &str) -> PathBuf {
        self.session_dir(id).join("journal.jsonl")
    }

    pub fn exists(&self, id: &str) -> bool {
        validate_id(id).is_ok() && self.journal_path(id).is_file()
    }

    pub fn list(&self) -> Result<Vec<String>, SessionError> {
        let mut ids: Vec<String> = fs::read_dir(self.root.join("sessions"))?
            .filter_map(Result::ok)
            .filter(|e| e.path().join("journal.jsonl").is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Serializes writers of one session.
    pub fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap();
        Arc::clone(locks.entry(id.to_string()).or_default())
    }

    pub(crate) fn create(&self, id: &str) -> Result<(), SessionError> {
        validate_id(id)?;
        let dir = self.session_dir(id);
        if self.journal_path(id).exists() {
            return Err(SessionError::AlreadyExists(id.to_string()));
        }
        fs::create_dir_all(dir.join("artifacts"))?;
        fs::create_dir_all(dir.join("reports"))?;
        Ok(())
    }

    pub fn read_events(&self, id: &str) -> Result<Vec<Event>, SessionError> {
        validate_id(id)?;
        let path = self.journal_path(id);
        let file = File::open(&path).map_err(|_| SessionError::NotFound(id.to_string()))?;
        let mut events = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: JournalLine =
                serde_json::from_str(&line).map_err(|e| SessionError::Journal(format!("line {}: {e}", i + 1)))?;
            if parsed.seq != events.len() as u64 {
                return Err(SessionError::Journal(format!(
                    "line {} has seq {}, expected {}",
                    i + 1,
                    parsed.seq,
                    events.len()
                )));
            }
            events.push(parsed.event);
        }
        Ok(events)
    }

    /// Rebuilds a session by replaying its journal. Every artifact version
    /// is re-extracted and re-assembled and must match its recorded hash.
    pub fn load(&self, id: &str) -> Result<Session, SessionError> {
        Session::from_events(&self.read_events(id)?)
    }

    /// Appends events durably; `first_seq` must equal the journal length.
    pub(crate) fn append(&self, id: &str, first_seq: usize, events: &[Event]) -> Result<(), SessionError> {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.journal_path(id))?;
        let mut buf = String::new();
        for (i, event) in events.iter().enumerate() {
            let line = JournalLine {
                seq: (first_seq + i) as u64,
                event: event.clone(),
            };
            buf.push_str(&serde_json::to_string(&line).map_err(|e| SessionError::Io(e.to_string()))?);
            buf.push('\n');
        }
        file.write_all(buf.as_bytes())?;
        file.sync_data()?;
        Ok(())
    }

    pub(crate) fn write_file(&self, id: &str, rel: &str, contents: &str) -> Result<(), SessionError> {
        let path = self.session_dir(id).join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, contents)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn read_file(&self, id: &str, rel: &str) -> Result<String, SessionError> {
        validate_id(id)?;
        if rel.split('/').any(|part| part == "..") {
            return Err(SessionError::Io(format!("refusing path {rel}")));
        }
        Ok(fs::read_to_string(self.session_dir(id).join(rel))?)
    }

    pub fn artifact_file(sha256: &str) -> String {
        format!("artifacts/{sha256}.py")
    }

    /// Replays the journal and compares each version with its stored file.
    pub fn audit(&self, id: &str) -> Result<AuditReport, SessionError> {
        let events = self.read_events(id)?;
        let session = Session::from_events(&events)?;
        let mut report = AuditReport {
            session_id: id.to_string(),
            events: events.len(),
            versions_checked: Vec::new(),
            file_mismatches: Vec::new(),
        };
        for a in &session.artifacts {
            report.versions_checked.push(a.version);
            let stored = self.read_file(id, &Self::artifact_file(&a.test_sha256)).ok();
            if stored.as_deref() != Some(a.test.source_text.as_str()) {
                report.file_mismatches.push(a.version);
            }
        }
        Ok(report)
    }
}
