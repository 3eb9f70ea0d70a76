use std::collections::hash_map::RandomState;
use std::collections::HashMap;
use std::hash::BuildHasher;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use spectro_core::bundle::ModelBundle;
use spectro_core::dataset::CodemapRecord;
use spectro_core::lm::ConditioningLabels;
use spectro_core::vqvae::CodemapPair;

use crate::error::ApiError;

#[derive(Clone, Debug)]
pub struct Session {
    pub id: String,
    pub codes: CodemapPair,
    pub labels: ConditioningLabels,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub updated: u64,
}

pub(crate) struct Slot {
    pub session: Mutex<Session>,
    busy: AtomicBool,
}

/// Exclusive right to mutate one session; released on drop.
pub(crate) struct Lease(Arc<Slot>);

impl Lease {
    pub fn slot(&self) -> &Slot {
        &self.0
    }
}

impl Drop for Lease {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

/// Shared server state: immutable models and the session table.
#[derive(Clone)]
pub struct AppState {
    pub(crate) models: Option<Arc<ModelBundle>>,
    sessions: Arc<Mutex<HashMap<String, Arc<Slot>>>>,
    counter: Arc<AtomicU64>,
    hasher: RandomState,
}

pub(crate) fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl AppState {
    pub fn new(models: Option<ModelBundle>) -> Self {
        Self {
            models: models.map(Arc::new),
            sessions: Arc::default(),
            counter: Arc::default(),
            hasher: RandomState::new(),
        }
    }

    pub fn models(&self) -> Option<&Arc<ModelBundle>> {
        self.models.as_ref()
    }

    pub(crate) fn require_models(&self) -> Result<Arc<ModelBundle>, ApiError> {
        self.models.clone().ok_or_else(ApiError::unavailable)
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session table").len()
    }

    pub(crate) fn insert(&self, codes: CodemapPair, labels: ConditioningLabels) -> Session {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let id = format!("{:016x}{:04x}", self.hasher.hash_one(n), n & 0xffff);
        let t = now();
        let session = Session {
            id: id.clone(),
            codes,
            labels,
            created: t,
            updated: t,
        };
        let slot = Arc::new(Slot {
            session: Mutex::new(session.clone()),
            busy: AtomicBool::new(false),
        });
        self.sessions.lock().expect("session table").insert(id, slot);
        session
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.sessions
            .lock()
            .expect("session table")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    pub(crate) fn get(&self, id: &str) -> Result<Session, ApiError> {
        Ok(self.slot(id)?.session.lock().expect("session").clone())
    }

    /// Claims a session for mutation; 409 if another mutation is running.
    pub(crate) fn lease(&self, id: &str) -> Result<Lease, ApiError> {
        let slot = self.slot(id)?;
        slot.busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map_err(|_| ApiError::busy(id))?;
        Ok(Lease(slot))
    }

    pub(crate) fn remove(&self, id: &str) -> Result<(), ApiError> {
        self.sessions
            .lock()
            .expect("session table")
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| ApiError::not_found(id))
    }

    /// Writes every session as JSON codemap records.
    pub fn snapshot(&self, path: &Path) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Entry {
            session_id: String,
            id: u32,
            pitch: u8,
            instrument: u8,
            top: Vec<Vec<usize>>,
            bottom: Vec<Vec<usize>>,
        }
        let table = self.sessions.lock().expect("session table");
        let entries: Vec<Entry> = table
            .values()
            .enumerate()
            .map(|(i, slot)| {
                let s = slot.session.lock().expect("session");
                let rec = CodemapRecord {
                    id: i as u32,
                    pitch: s.labels.pitch(),
                    instrument: s.labels.instrument(),
                    codes: s.codes.clone(),
                };
                Entry {
                    session_id: s.id.clone(),
                    id: rec.id,
                    pitch: rec.pitch,
                    instrument: rec.instrument,
                    top: rec.codes.top.to_nested(),
                    bottom: rec.codes.bottom.to_nested(),
                }
            })
            .collect();
        std::fs::write(path, serde_json::to_vec_pretty(&entries)?)
    }
}
