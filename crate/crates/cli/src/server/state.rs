use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use edgewipe::dataset::Workspace;
use edgewipe::imaging::{GridMeta, Scene, TileCoord, TileGrid};
use edgewipe::metrics::SimilarityReport;
use edgewipe::removal::{ForgedResult, RemovalMask};
use edgewipe::translate::TranslatorCheckpoint;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::error::ApiError;
use crate::config::Config;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    fn rank(self) -> u8 {
        match self {
            JobState::Queued => 0,
            JobState::Running => 1,
            JobState::Done | JobState::Failed => 2,
        }
    }

    pub fn is_final(self) -> bool {
        self.rank() == 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Train,
    Removal,
    DatasetBuild,
    Evaluate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub progress: f64,
    pub message: Option<String>,
    pub result: Option<Value>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl JobStatus {
    pub fn new(kind: JobKind) -> Self {
        let now = Utc::now();
        JobStatus {
            job_id: uuid::Uuid::new_v4().to_string(),
            kind,
            state: JobState::Queued,
            progress: 0.0,
            message: None,
            result: None,
            created_at: now,
            updated_at: now,
        }
    }

    /// Move forward only; returns false (and changes nothing) otherwise.
    pub fn advance(&mut self, state: JobState) -> bool {
        if self.state.is_final() || state.rank() < self.state.rank() {
            return false;
        }
        self.state = state;
        if state == JobState::Done {
            self.progress = 1.0;
        }
        self.updated_at = Utc::now();
        true
    }

    pub fn set_progress(&mut self, p: f64) {
        if !self.state.is_final() {
            self.progress = p.clamp(self.progress, 1.0);
            self.updated_at = Utc::now();
        }
    }

    pub fn fail(&mut self, message: String) {
        if self.advance(JobState::Failed) {
            self.message = Some(message);
        }
    }
}

/// Interactive state of one uploaded scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub scene_id: String,
    pub content_id: String,
    pub grid: GridMeta,
    pub active_checkpoint_id: Option<String>,
    pub pending_removals: Vec<String>,
    pub completed_removals: Vec<String>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

pub struct Session {
    pub scene: Scene,
    pub grid: TileGrid,
    pub state: Mutex<SessionState>,
}

impl Session {
    pub fn touch(&self, f: impl FnOnce(&mut SessionState)) {
        let mut s = self.state.lock().expect("session poisoned");
        f(&mut s);
        s.updated_at = Utc::now();
    }
}

#[derive(Clone)]
pub struct RemovalRecord {
    pub removal_id: String,
    pub scene_id: String,
    pub mask: RemovalMask,
    pub checkpoint_id: String,
    pub state: JobState,
    pub job_id: Option<String>,
    pub result: Option<Arc<ForgedResult>>,
    pub reports: Vec<SimilarityReport>,
    pub error: Option<ApiError>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalStatus {
    pub removal_id: String,
    pub scene_id: String,
    pub tile: TileCoord,
    pub checkpoint_id: String,
    pub state: JobState,
    pub job_id: Option<String>,
    pub error: Option<Value>,
}

impl RemovalRecord {
    pub fn status(&self) -> RemovalStatus {
        RemovalStatus {
            removal_id: self.removal_id.clone(),
            scene_id: self.scene_id.clone(),
            tile: self.mask.tile_coord(),
            checkpoint_id: self.checkpoint_id.clone(),
            state: self.state,
            job_id: self.job_id.clone(),
            error: self.error.as_ref().map(|e| serde_json::to_value(&e.body).expect("error serializes")),
        }
    }
}

/// Least-recently-used set of loaded checkpoints.
pub struct CheckpointCache {
    capacity: usize,
    entries: Vec<(String, Arc<TranslatorCheckpoint>)>,
}

impl CheckpointCache {
    pub fn new(capacity: usize) -> Self {
        CheckpointCache { capacity: capacity.max(1), entries: Vec::new() }
    }

    pub fn get(&mut self, id: &str) -> Option<Arc<TranslatorCheckpoint>> {
        let i = self.entries.iter().position(|(k, _)| k == id)?;
        let e = self.entries.remove(i);
        let ckpt = e.1.clone();
        self.entries.push(e);
        Some(ckpt)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.iter().any(|(k, _)| k == id)
    }

    pub fn insert(&mut self, ckpt: Arc<TranslatorCheckpoint>) {
        let id = ckpt.id().to_string();
        self.entries.retain(|(k, _)| *k != id);
        self.entries.push((id, ckpt));
        while self.entries.len() > self.capacity {
            let (evicted, _) = self.entries.remove(0);
            log::info!("checkpoint {evicted} evicted from memory");
        }
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|(k, _)| k.clone()).collect()
    }
}

pub type TileKey = (String, u32, u32);

pub struct Shared {
    pub config: Config,
    pub workspace: Workspace,
    pub sessions: RwLock<HashMap<String, Arc<Session>>>,
    pub removals: RwLock<HashMap<String, RemovalRecord>>,
    pub jobs: Mutex<HashMap<String, JobStatus>>,
    pub checkpoints: Mutex<CheckpointCache>,
    pub tile_locks: Mutex<HashSet<TileKey>>,
    /// (scene id, key) -> (request body digest, removal id).
    pub idempotency: Mutex<HashMap<(String, String), (String, String)>>,
    /// Serializes training runs.
    pub train_gate: tokio::sync::Semaphore,
}

#[derive(Clone)]
pub struct AppState(pub Arc<Shared>);

impl std::ops::Deref for AppState {
    type Target = Shared;
    fn deref(&self) -> &Shared {
        &self.0
    }
}

impl AppState {
    pub fn new(config: Config) -> edgewipe::Result<Self> {
        let workspace = Workspace::create(&config.workspace)?;
        Ok(AppState(Arc::new(Shared {
            checkpoints: Mutex::new(CheckpointCache::new(config.resident_checkpoints)),
            config,
            workspace,
            sessions: RwLock::default(),
            removals: RwLock::default(),
            jobs: Mutex::default(),
            tile_locks: Mutex::default(),
            idempotency: Mutex::default(),
            train_gate: tokio::sync::Semaphore::new(1),
        })))
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions.read().expect("sessions poisoned").get(id).cloned().ok_or_else(|| ApiError::not_found("UnknownScene", format!("no scene {id}")))
    }

    pub fn put_job(&self, job: JobStatus) {
        self.jobs.lock().expect("jobs poisoned").insert(job.job_id.clone(), job);
    }

    pub fn update_job(&self, id: &str, f: impl FnOnce(&mut JobStatus)) {
        if let Some(j) = self.jobs.lock().expect("jobs poisoned").get_mut(id) {
            f(j);
        }
    }

    /// Take the per-tile lock, or `None` when another removal holds it.
    pub fn lock_tile(&self, key: TileKey) -> Option<TileLock> {
        let mut locks = self.tile_locks.lock().expect("tile locks poisoned");
        locks.insert(key.clone()).then(|| TileLock { state: self.clone(), key })
    }
}

/// Held for the duration of one removal; released on drop.
pub struct TileLock {
    state: AppState,
    key: TileKey,
}

impl Drop for TileLock {
    fn drop(&mut self) {
        self.state.tile_locks.lock().expect("tile locks poisoned").remove(&self.key);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn job_states_only_move_forward() {
        let mut j = JobStatus::new(JobKind::Train);
        assert!(j.advance(JobState::Running));
        assert!(!j.advance(JobState::Queued));
        j.set_progress(0.5);
        j.set_progress(0.2);
        assert_eq!(j.progress, 0.5);
        j.fail("boom".into());
        assert_eq!(j.state, JobState::Failed);
        assert!(!j.advance(JobState::Done));
        assert_eq!(j.message.as_deref(), Some("boom"));
    }

    #[test]
    fn job_ids_are_v4_uuids() {
        let a = JobStatus::new(JobKind::Removal);
        let b = JobStatus::new(JobKind::Removal);
        assert_ne!(a.job_id, b.job_id);
        assert_eq!(uuid::Uuid::parse_str(&a.job_id).unwrap().get_version_num(), 4);
    }
}
