use std::collections::BTreeSet;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{DmsCache, DmsError, ExternalDataRef, LocalHandle, TransferLog, TransferRecord, TransferSource};
use crate::planner::{DatasetAccess, ResourceDescriptor};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StagingKind {
    /// Bind the resource's POSIX copy into the container. No bytes move.
    Mount,
    /// Copy from a non-POSIX service on the resource to local storage.
    StageIn,
    /// Fetch through the shared cache from the external repository.
    CacheFetch,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StagingAction {
    pub uri: String,
    pub action: StagingKind,
    pub resource: String,
}

/// Chooses how `data_ref` reaches a consumer running on `resource`.
pub fn resolve_local(data_ref: &ExternalDataRef, resource: &ResourceDescriptor) -> StagingAction {
    let action = match resource.local_access(&data_ref.uri) {
        Some(DatasetAccess::Posix) => StagingKind::Mount,
        Some(DatasetAccess::NonPosix) => StagingKind::StageIn,
        None => StagingKind::CacheFetch,
    };
    StagingAction { uri: data_ref.uri.clone(), action, resource: resource.name.clone() }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StagingOutcome {
    Mounted { path: String },
    StagedIn { path: String, ready_at: SimTime, record: Option<TransferRecord> },
    Cached(LocalHandle),
}

/// Executes staging actions against the shared cache and per-resource
/// local copies. Stage-ins happen once per (resource, dataset).
#[derive(Debug)]
pub struct DataManager {
    cache: DmsCache,
    local_bandwidth_bytes_per_s: f64,
    staged: Mutex<BTreeSet<(String, String)>>,
}

impl DataManager {
    pub fn new(cache: DmsCache, local_bandwidth_bytes_per_s: f64) -> Self {
        DataManager { cache, local_bandwidth_bytes_per_s, staged: Mutex::new(BTreeSet::new()) }
    }

    pub fn cache(&self) -> &DmsCache {
        &self.cache
    }

    pub fn transfer_log(&self) -> &Arc<TransferLog> {
        self.cache.transfer_log()
    }

    pub fn stage(&self, action: &StagingAction, now: SimTime) -> Result<StagingOutcome, DmsError> {
        let data_ref = self.cache.lookup(&action.uri).ok_or_else(|| DmsError::Unregistered(action.uri.clone()))?;
        match action.action {
            StagingKind::Mount => Ok(StagingOutcome::Mounted { path: mount_path(&action.uri) }),
            StagingKind::StageIn => {
                let path = format!("/scratch/tale-data/{}", path_component(&action.uri));
                let mut staged = self.staged.lock();
                if !staged.insert((action.resource.clone(), action.uri.clone())) {
                    return Ok(StagingOutcome::StagedIn { path, ready_at: now, record: None });
                }
                let duration = if self.local_bandwidth_bytes_per_s > 0.0 && data_ref.size_bytes > 0 {
                    SimDuration::from_secs_f64(data_ref.size_bytes as f64 / self.local_bandwidth_bytes_per_s)
                } else {
                    SimDuration::ZERO
                };
                let record = TransferRecord {
                    uri: action.uri.clone(),
                    source: TransferSource::HpcLocalStagein,
                    bytes: data_ref.size_bytes,
                    resource: Some(action.resource.clone()),
                    started: now,
                    finished: now + duration,
                };
                self.cache.transfer_log().append(record.clone());
                Ok(StagingOutcome::StagedIn { path, ready_at: record.finished, record: Some(record) })
            }
            StagingKind::CacheFetch => self.cache.open(&action.uri, now).map(StagingOutcome::Cached),
        }
    }
}

fn path_component(uri: &str) -> String {
    uri.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' }).collect()
}

fn mount_path(uri: &str) -> String {
    format!("/mnt/tale-data/{}", path_component(uri))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::Digest;
    use crate::dms::{CacheConfig, DatasetCatalog, SimRepository};
    use crate::planner::{LocalDataset, LrmKind, ResourceKind};

    fn hpc() -> ResourceDescriptor {
        let mut r = ResourceDescriptor::new("stampede", ResourceKind::HpcCluster, LrmKind::Batch, 100);
        r.local_datasets = vec![
            LocalDataset { uri: "renaissance/raw".into(), access: DatasetAccess::Posix },
            LocalDataset { uri: "renaissance/tape".into(), access: DatasetAccess::NonPosix },
        ];
        r
    }

    #[test]
    fn resolve_rules() {
        let big = ExternalDataRef::new("renaissance/raw", 70_000_000_000_000, Digest::of(b"raw"));
        let tape = ExternalDataRef::new("renaissance/tape", 10, Digest::of(b"tape"));
        let elsewhere = ExternalDataRef::new("doi:remote", 10, Digest::of(b"r"));
        assert_eq!(resolve_local(&big, &hpc()).action, StagingKind::Mount);
        assert_eq!(resolve_local(&tape, &hpc()).action, StagingKind::StageIn);
        assert_eq!(resolve_local(&elsewhere, &hpc()).action, StagingKind::CacheFetch);
    }

    #[test]
    fn mount_moves_no_bytes() {
        let big = ExternalDataRef::new("renaissance/raw", 70_000_000_000_000, Digest::of(b"raw"));
        let catalog = DatasetCatalog::from_refs([big.clone()]).unwrap();
        let cache = DmsCache::new(
            CacheConfig::default(),
            catalog,
            Arc::new(SimRepository::new()),
            Arc::new(TransferLog::new()),
        );
        let dm = DataManager::new(cache, 1e9);
        let action = resolve_local(&big, &hpc());
        assert!(matches!(dm.stage(&action, SimTime::ZERO).unwrap(), StagingOutcome::Mounted { .. }));
        assert!(dm.transfer_log().is_empty());
    }

    #[test]
    fn stage_in_happens_once_per_resource() {
        let tape = ExternalDataRef::new("renaissance/tape", 10, Digest::of(b"tape"));
        let catalog = DatasetCatalog::from_refs([tape.clone()]).unwrap();
        let cache =
            DmsCache::new(CacheConfig::default(), catalog, Arc::new(SimRepository::new()), Arc::new(TransferLog::new()));
        let dm = DataManager::new(cache, 10.0);
        let action = resolve_local(&tape, &hpc());
        dm.stage(&action, SimTime::ZERO).unwrap();
        dm.stage(&action, SimTime::from_secs(5)).unwrap();
        let log = dm.transfer_log().snapshot();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].source, TransferSource::HpcLocalStagein);
        assert_eq!(log[0].finished, SimTime::from_secs(1));
    }
}
