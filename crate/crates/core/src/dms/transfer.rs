use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferSource {
    RemoteRepo,
    HpcLocalStagein,
}

/// One actual movement of bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub uri: String,
    pub source: TransferSource,
    pub bytes: u64,
    /// Resource the bytes landed on; `None` for the shared cache.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource: Option<String>,
    pub started: SimTime,
    pub finished: SimTime,
}

/// Append-only transfer log.
#[derive(Debug, Default)]
pub struct TransferLog {
    records: Mutex<Vec<TransferRecord>>,
}

impl TransferLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&self, record: TransferRecord) {
        self.records.lock().push(record);
    }

    pub fn len(&self) -> usize {
        self.records.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<TransferRecord> {
        self.records.lock().clone()
    }

    pub fn since(&self, start: usize) -> Vec<TransferRecord> {
        self.records.lock().get(start..).map(<[_]>::to_vec).unwrap_or_default()
    }

    pub fn count_for(&self, uri: &str) -> usize {
        self.records.lock().iter().filter(|r| r.uri == uri).count()
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in self.records.lock().iter() {
            out.push_str(&serde_json::to_string(r).expect("transfer records serialize"));
            out.push('\n');
        }
        out
    }
}
