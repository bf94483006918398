//! Keeps live sessions by id. Each session sits behind its own mutex, so
//! steps on one session are serialized while distinct sessions run in
//! parallel.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, RwLock};

use sha2::{Digest, Sha256};

use super::{start_session, EngineError, Runtime, Session, SessionOptions};
use crate::gateway::UsageTotals;
use crate::model::TopologyGraph;
use crate::value::Value;

/// A UUID-shaped id derived from `(seed, counter)`.
pub fn seeded_session_id(seed: u64, counter: u64) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(counter.to_le_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 16];
    bytes.copy_from_slice(&digest[..16]);
    uuid::Builder::from_random_bytes(bytes).into_uuid().to_string()
}

pub type SharedSession = Arc<Mutex<Session>>;

#[derive(Debug)]
pub struct SessionManager {
    runtime: Arc<Runtime>,
    sessions: RwLock<BTreeMap<String, SharedSession>>,
    seed: Option<u64>,
    counter: Mutex<u64>,
}

impl SessionManager {
    pub fn new(runtime: Arc<Runtime>) -> SessionManager {
        SessionManager {
            runtime,
            sessions: RwLock::new(BTreeMap::new()),
            seed: None,
            counter: Mutex::new(0),
        }
    }

    /// Session ids become a pure function of `seed` and creation order.
    pub fn with_seed(mut self, seed: u64) -> SessionManager {
        self.seed = Some(seed);
        self
    }

    pub fn runtime(&self) -> &Arc<Runtime> {
        &self.runtime
    }

    pub fn start(
        &self,
        graph: TopologyGraph,
        input: Value,
        mut options: SessionOptions,
    ) -> Result<SharedSession, EngineError> {
        if options.id.is_none() {
            if let Some(seed) = self.seed {
                let mut counter = self.counter.lock().expect("counter lock");
                options.id = Some(seeded_session_id(seed, *counter));
                *counter += 1;
            }
        }
        let session = start_session(self.runtime.clone(), graph, input, options)?;
        let id = session.id().to_string();
        let shared = Arc::new(Mutex::new(session));
        self.sessions
            .write()
            .expect("sessions lock")
            .insert(id, shared.clone());
        Ok(shared)
    }

    pub fn get(&self, id: &str) -> Result<SharedSession, EngineError> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownSession(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.read().expect("sessions lock").keys().cloned().collect()
    }

    pub fn remove(&self, id: &str) -> Option<SharedSession> {
        self.sessions.write().expect("sessions lock").remove(id)
    }

    pub fn usage(&self, id: &str) -> Result<UsageTotals, EngineError> {
        Ok(self.get(id)?.lock().expect("session lock").usage())
    }

    /// Usage summed over every session held.
    pub fn total_usage(&self) -> UsageTotals {
        let mut total = UsageTotals::default();
        for s in self.sessions.read().expect("sessions lock").values() {
            total.merge(&s.lock().expect("session lock").usage());
        }
        total
    }
}
