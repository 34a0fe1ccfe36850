use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, SessionConfig, SessionState};
use crate::error::{ApiError, ApiResult};
use crate::store::{Record, Store, StoreError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub item: usize,
    pub rating: u8,
    /// EVOI of the item just before it was rated.
    pub evoi: Option<f64>,
    pub at: u64,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub config: SessionConfig,
    pub history: Vec<HistoryEntry>,
    pub created_at: u64,
    pub updated_at: u64,
    /// Derived from `history`; never persisted.
    pub state: SessionState,
}

pub fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// 128 random bits from the thread-local CSPRNG, hex encoded.
pub fn new_session_id() -> String {
    format!("{:032x}", rand::rng().random::<u128>())
}

/// The engine plus every live session. Each session sits behind its own
/// mutex, so writes to one session are serialized while different sessions
/// proceed independently.
pub struct Sessions {
    engine: Arc<Engine>,
    store: Store,
    map: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl Sessions {
    pub fn new(engine: Arc<Engine>, store: Store) -> Self {
        Self { engine, store, map: RwLock::new(HashMap::new()) }
    }

    /// Rebuilds sessions from stored records.
    pub fn restore(engine: Arc<Engine>, store: Store, records: Vec<Record>) -> Result<Self, StoreError> {
        let path = store.path().map(|p| p.to_path_buf()).unwrap_or_default();
        let corrupt = |line: usize, message: String| StoreError::Corrupt { path: path.clone(), line, message };
        let mut map: HashMap<String, Session> = HashMap::new();
        for (i, rec) in records.into_iter().enumerate() {
            match rec {
                Record::Create { id, at, config } => {
                    let state = engine.prior_state();
                    let s = Session { id: id.clone(), config, history: vec![], created_at: at, updated_at: at, state };
                    if map.insert(id.clone(), s).is_some() {
                        return Err(corrupt(i + 1, format!("session {id} created twice")));
                    }
                }
                Record::Rate { id, at, item, rating, evoi } => {
                    let s = map.get_mut(&id).ok_or_else(|| corrupt(i + 1, format!("rating for unknown session {id}")))?;
                    s.state = engine.observe(&s.state, item, rating).map_err(|e| corrupt(i + 1, e.to_string()))?;
                    s.history.push(HistoryEntry { item, rating, evoi, at });
                    s.updated_at = at;
                }
            }
        }
        let sessions = Self::new(engine, store);
        *sessions.map.write().unwrap() = map.into_iter().map(|(k, v)| (k, Arc::new(Mutex::new(v)))).collect();
        Ok(sessions)
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn create(&self, config: SessionConfig) -> ApiResult<Session> {
        let at = now_millis();
        let id = new_session_id();
        let session = Session {
            id: id.clone(),
            config: config.clone(),
            history: vec![],
            created_at: at,
            updated_at: at,
            state: self.engine.prior_state(),
        };
        self.store.append(&Record::Create { id: id.clone(), at, config })?;
        self.map.write().unwrap_or_else(|e| e.into_inner()).insert(id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    fn handle(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        self.map
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session {id:?}")))
    }

    /// Runs `f` with shared access to one session.
    pub fn read<T>(&self, id: &str, f: impl FnOnce(&Session) -> ApiResult<T>) -> ApiResult<T> {
        let h = self.handle(id)?;
        let guard = h.lock().unwrap_or_else(|e| e.into_inner());
        f(&guard)
    }

    /// Records a rating: the new state is computed first, then the record is
    /// written to the log, and only then does the in-memory session change.
    pub fn rate(&self, id: &str, item: usize, rating: u8) -> ApiResult<Session> {
        let h = self.handle(id)?;
        let mut s = h.lock().unwrap_or_else(|e| e.into_inner());
        let state = self.engine.observe(&s.state, item, rating)?;
        let evoi = self.engine.evoi_of(&s.state, item)?;
        let at = now_millis();
        self.store.append(&Record::Rate { id: id.to_string(), at, item, rating, evoi })?;
        s.state = state;
        s.history.push(HistoryEntry { item, rating, evoi, at });
        s.updated_at = at;
        Ok(s.clone())
    }
}
