use std::collections::BTreeMap;

use parking_lot::Mutex;
use serde_json::Value;

use super::{ProvenanceKind, Tale, TaleError, TaleId};

/// A repository of Tales keyed by id. Provenance appends go through here so
/// that concurrent recorders get exclusive access to each record.
#[derive(Debug, Default)]
pub struct TaleStore {
    tales: Mutex<BTreeMap<TaleId, Tale>>,
}

impl TaleStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, tale: Tale) -> Result<(), TaleError> {
        let mut tales = self.tales.lock();
        if tales.contains_key(&tale.id) {
            return Err(TaleError::DuplicateId(tale.id.to_string()));
        }
        tales.insert(tale.id.clone(), tale);
        Ok(())
    }

    pub fn get(&self, id: &TaleId) -> Option<Tale> {
        self.tales.lock().get(id).cloned()
    }

    pub fn contains(&self, id: &TaleId) -> bool {
        self.tales.lock().contains_key(id)
    }

    pub fn ids(&self) -> Vec<TaleId> {
        self.tales.lock().keys().cloned().collect()
    }

    pub fn record(
        &self,
        id: &TaleId,
        kind: ProvenanceKind,
        payload: BTreeMap<String, Value>,
        timestamp_us: u64,
    ) -> Result<u64, TaleError> {
        let mut tales = self.tales.lock();
        let tale = tales.get_mut(id).ok_or_else(|| TaleError::UnknownTale(id.to_string()))?;
        Ok(tale.append_event(kind, payload, timestamp_us))
    }
}
