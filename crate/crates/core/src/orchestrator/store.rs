//! Per-session mutable state behind a storage seam.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::capture::SignalAccumulator;
use crate::domain::{ContextSnapshot, NudgeDelivery, NudgeId, SessionId};
use crate::modeling::History;
use crate::orchestrator::PipelineOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: SessionId,
    pub context: Option<ContextSnapshot>,
    pub signals: SignalAccumulator,
    pub history: History,
    /// Delivered nudges by id.
    pub delivered: BTreeMap<NudgeId, NudgeDelivery>,
    pub nudge_counter: u64,
    pub last_outcome: Option<PipelineOutcome>,
    pub last_delivery: Option<NudgeId>,
    /// Appliance action count at the last automatic run.
    #[serde(default)]
    pub actions_at_last_auto_run: u64,
}

impl SessionState {
    pub fn new(session_id: SessionId) -> Self {
        Self {
            session_id,
            context: None,
            signals: SignalAccumulator::new(),
            history: History::default(),
            delivered: BTreeMap::new(),
            nudge_counter: 0,
            last_outcome: None,
            last_delivery: None,
            actions_at_last_auto_run: 0,
        }
    }

    pub fn latest_delivery(&self) -> Option<&NudgeDelivery> {
        self.last_delivery.as_ref().and_then(|id| self.delivered.get(id))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("session store I/O on {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("corrupt session file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

pub trait SessionStore: Send + Sync {
    fn load(&self, id: &SessionId) -> Result<Option<SessionState>, StoreError>;
    fn save(&self, state: &SessionState) -> Result<(), StoreError>;
    fn ids(&self) -> Result<Vec<SessionId>, StoreError>;
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    sessions: Mutex<HashMap<SessionId, SessionState>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SessionStore for MemoryStore {
    fn load(&self, id: &SessionId) -> Result<Option<SessionState>, StoreError> {
        Ok(self.sessions.lock().unwrap_or_else(|e| e.into_inner()).get(id).cloned())
    }

    fn save(&self, state: &SessionState) -> Result<(), StoreError> {
        self.sessions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(state.session_id.clone(), state.clone());
        Ok(())
    }

    fn ids(&self) -> Result<Vec<SessionId>, StoreError> {
        let mut ids: Vec<SessionId> = self.sessions.lock().unwrap_or_else(|e| e.into_inner()).keys().cloned().collect();
        ids.sort();
        Ok(ids)
    }
}

/// One JSON file per session, replaced atomically on save.
#[derive(Debug)]
pub struct FileStore {
    dir: PathBuf,
}

impl FileStore {
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir).map_err(|e| StoreError::Io { path: dir.to_path_buf(), reason: e.to_string() })?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn path(&self, id: &SessionId) -> PathBuf {
        self.dir.join(format!("{}.json", id.as_str()))
    }
}

impl SessionStore for FileStore {
    fn load(&self, id: &SessionId) -> Result<Option<SessionState>, StoreError> {
        let path = self.path(id);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(StoreError::Io { path, reason: e.to_string() }),
        };
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| StoreError::Corrupt { path, reason: e.to_string() })
    }

    fn save(&self, state: &SessionState) -> Result<(), StoreError> {
        let path = self.path(&state.session_id);
        let io = |e: std::io::Error| StoreError::Io { path: path.clone(), reason: e.to_string() };
        let text = serde_json::to_string(state).map_err(|e| StoreError::Corrupt { path: path.clone(), reason: e.to_string() })?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)
    }

    fn ids(&self) -> Result<Vec<SessionId>, StoreError> {
        let io = |e: std::io::Error| StoreError::Io { path: self.dir.clone(), reason: e.to_string() };
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(&self.dir).map_err(io)? {
            let p = entry.map_err(io)?.path();
            if p.extension().is_some_and(|e| e == "json") {
                if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                    ids.push(SessionId::new(stem));
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}
