use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceKind {
    Created,
    Launched,
    JobSubmitted,
    JobStateChange,
    DataTransfer,
    Exported,
    Imported,
}

/// One entry of a Tale's append-only provenance log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEvent {
    pub seq: u64,
    /// Microseconds, on the simulation clock or since the Unix epoch.
    pub timestamp_us: u64,
    pub kind: ProvenanceKind,
    #[serde(default)]
    pub payload: BTreeMap<String, serde_json::Value>,
}
