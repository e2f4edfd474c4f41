//! Case store: an append-only JSON-lines event log plus a content-addressed
//! image directory. State is rebuilt by replaying the log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nailguard::NUM_CLASSES;

use crate::error::{Result, ServiceError};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const IMAGES_DIR: &str = "images";

pub type CaseId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub category: String,
    pub probs: [f64; NUM_CLASSES],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pending,
    Reviewed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Confirm,
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub override_category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub reviewed_at: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: CaseId,
    /// Hex SHA-256 of the submitted bytes.
    pub image_ref: String,
    /// Milliseconds since the Unix epoch.
    pub submitted_at: i64,
    pub model_id: String,
    pub prediction: Prediction,
    pub priority_score: f64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review: Option<Review>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Submitted { case: Case },
    Reviewed { case_id: CaseId, review: Review },
    Activated { model_id: String, at: i64 },
}

/// In-memory state. Two stores compare equal when every case field and the
/// active model agree.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StoreState {
    pub cases: BTreeMap<CaseId, Case>,
    pub next_id: CaseId,
    pub active_model: Option<String>,
}

impl StoreState {
    fn apply(&mut self, event: &Event) -> std::result::Result<(), String> {
        match event {
            Event::Submitted { case } => {
                if self.cases.contains_key(&case.case_id) {
                    return Err(format!("case {} submitted twice", case.case_id));
                }
                self.next_id = self.next_id.max(case.case_id + 1);
                self.cases.insert(case.case_id, case.clone());
            }
            Event::Reviewed { case_id, review } => {
                let case = self.cases.get_mut(case_id).ok_or_else(|| format!("review of unknown case {case_id}"))?;
                if case.status == Status::Reviewed {
                    return Err(format!("case {case_id} reviewed twice"));
                }
                case.status = Status::Reviewed;
                case.review = Some(review.clone());
            }
            Event::Activated { model_id, .. } => self.active_model = Some(model_id.clone()),
        }
        Ok(())
    }

    /// Pending cases by priority (descending), then submission time, then id.
    pub fn pending_queue(&self) -> Vec<&Case> {
        let mut out: Vec<&Case> = self.cases.values().filter(|c| c.status == Status::Pending).collect();
        out.sort_by(|a, b| queue_order(a, b));
        out
    }
}

pub fn queue_order(a: &Case, b: &Case) -> std::cmp::Ordering {
    b.priority_score
        .total_cmp(&a.priority_score)
        .then(a.submitted_at.cmp(&b.submitted_at))
        .then(a.case_id.cmp(&b.case_id))
}

pub fn image_ref(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Durable store. Without a directory everything stays in memory.
#[derive(Debug)]
pub struct CaseStore {
    dir: Option<PathBuf>,
    log: Option<File>,
    state: StoreState,
    images: BTreeMap<String, Vec<u8>>,
}

impl CaseStore {
    pub fn in_memory() -> Self {
        Self { dir: None, log: None, state: StoreState::default(), images: BTreeMap::new() }
    }

    /// Opens (or creates) a store directory and replays its event log. A
    /// truncated final line is dropped with a warning; any other malformed
    /// line is an error.
    pub fn open(dir: &Path) -> Result<Self> {
        let images = dir.join(IMAGES_DIR);
        std::fs::create_dir_all(&images).map_err(|e| ServiceError::storage(&images, e))?;
        let path = dir.join(EVENTS_FILE);
        let mut state = StoreState::default();
        if path.exists() {
            let file = File::open(&path).map_err(|e| ServiceError::storage(&path, e))?;
            let lines: Vec<String> = BufReader::new(file)
                .lines()
                .collect::<std::io::Result<_>>()
                .map_err(|e| ServiceError::storage(&path, e))?;
            let last = lines.len();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let event: Event = match serde_json::from_str(line) {
                    Ok(ev) => ev,
                    Err(e) if i + 1 == last => {
                        log::warn!("dropping truncated final event log line: {e}");
                        break;
                    }
                    Err(e) => return Err(ServiceError::CorruptLog { line: i + 1, reason: e.to_string() }),
                };
                state.apply(&event).map_err(|reason| ServiceError::CorruptLog { line: i + 1, reason })?;
            }
        }
        let log =
            OpenOptions::new().create(true).append(true).open(&path).map_err(|e| ServiceError::storage(&path, e))?;
        Ok(Self { dir: Some(dir.to_path_buf()), log: Some(log), state, images: BTreeMap::new() })
    }

    pub fn state(&self) -> &StoreState {
        &self.state
    }

    pub fn get(&self, id: CaseId) -> Option<&Case> {
        self.state.cases.get(&id)
    }

    pub fn pending_queue(&self) -> Vec<&Case> {
        self.state.pending_queue()
    }

    pub fn next_id(&self) -> CaseId {
        self.state.next_id
    }

    pub fn active_model(&self) -> Option<&str> {
        self.state.active_model.as_deref()
    }

    /// The single commit point: persist first, then apply.
    fn commit(&mut self, event: Event) -> Result<()> {
        if let (Some(log), Some(dir)) = (self.log.as_mut(), self.dir.as_ref()) {
            let mut line = serde_json::to_string(&event).expect("events serialize");
            line.push('\n');
            let path = dir.join(EVENTS_FILE);
            log.write_all(line.as_bytes()).map_err(|e| ServiceError::storage(&path, e))?;
            log.flush().map_err(|e| ServiceError::storage(&path, e))?;
        }
        self.state.apply(&event).map_err(ServiceError::Conflict)
    }

    /// Stores image bytes under their digest and returns the digest.
    pub fn put_image(&mut self, bytes: &[u8]) -> Result<String> {
        let key = image_ref(bytes);
        match &self.dir {
            Some(dir) => {
                let path = dir.join(IMAGES_DIR).join(&key);
                if !path.exists() {
                    let tmp = path.with_extension("tmp");
                    std::fs::write(&tmp, bytes).map_err(|e| ServiceError::storage(&tmp, e))?;
                    std::fs::rename(&tmp, &path).map_err(|e| ServiceError::storage(&path, e))?;
                }
            }
            None => {
                self.images.entry(key.clone()).or_insert_with(|| bytes.to_vec());
            }
        }
        Ok(key)
    }

    pub fn image(&self, key: &str) -> Result<Vec<u8>> {
        match &self.dir {
            Some(dir) => {
                let path = dir.join(IMAGES_DIR).join(key);
                std::fs::read(&path).map_err(|e| ServiceError::storage(&path, e))
            }
            None => self.images.get(key).cloned().ok_or_else(|| ServiceError::NotFound(format!("image {key}"))),
        }
    }

    /// Records a new pending case. The id is assigned here.
    pub fn submit(
        &mut self,
        image_ref: String,
        submitted_at: i64,
        model_id: String,
        prediction: Prediction,
        priority_score: f64,
    ) -> Result<Case> {
        let case = Case {
            case_id: self.state.next_id,
            image_ref,
            submitted_at,
            model_id,
            prediction,
            priority_score,
            status: Status::Pending,
            review: None,
        };
        self.commit(Event::Submitted { case: case.clone() })?;
        Ok(case)
    }

    pub fn review(&mut self, id: CaseId, review: Review) -> Result<Case> {
        let case = self.get(id).ok_or_else(|| ServiceError::NotFound(id.to_string()))?;
        if case.status == Status::Reviewed {
            return Err(ServiceError::Conflict(format!("case {id} is already reviewed")));
        }
        match (review.decision, &review.override_category) {
            (Decision::Override, None) => {
                return Err(ServiceError::Validation("override requires override_category".into()))
            }
            (Decision::Confirm, Some(_)) => {
                return Err(ServiceError::Validation("confirm takes no override_category".into()))
            }
            _ => {}
        }
        self.commit(Event::Reviewed { case_id: id, review })?;
        Ok(self.get(id).expect("case exists").clone())
    }

    pub fn activate(&mut self, model_id: &str, at: i64) -> Result<()> {
        self.commit(Event::Activated { model_id: model_id.to_string(), at })
    }
}
