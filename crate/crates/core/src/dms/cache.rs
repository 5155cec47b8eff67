//! Shared, capacity-bounded cache of externally referenced files.
//!
//! Opens of an absent file coalesce into a single transfer: the first opener
//! performs it while later openers wait on the entry. Eviction is least
//! recently used by access order, skipping pinned entries.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Condvar, Mutex, MutexGuard, RwLock};
use serde::{Deserialize, Serialize};

use super::{DatasetCatalog, DmsError, ExternalDataRef, TransferLog, TransferRecord, TransferSource};
use crate::digest::Digest;
use crate::tale::Tale;
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub capacity_bytes: u64,
    /// Wide-area bandwidth used to time simulated transfers.
    pub bandwidth_bytes_per_s: f64,
    #[serde(default = "default_root")]
    pub root: String,
}

fn default_root() -> String {
    "/wholetale/dms".to_string()
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig { capacity_bytes: 1 << 40, bandwidth_bytes_per_s: 100e6, root: default_root() }
    }
}

impl CacheConfig {
    pub fn transfer_time(&self, bytes: u64) -> SimDuration {
        if bytes == 0 || self.bandwidth_bytes_per_s <= 0.0 {
            return SimDuration::ZERO;
        }
        SimDuration::from_secs_f64(bytes as f64 / self.bandwidth_bytes_per_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryState {
    Absent,
    Transferring,
    Resident,
    Evicted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub data_ref: ExternalDataRef,
    pub state: EntryState,
    pub local_path: String,
    pub last_access: SimTime,
    pub pin_count: u32,
    /// When the bytes of the latest transfer are fully present.
    pub ready_at: SimTime,
    access_seq: u64,
    generation: u64,
    failed: Option<(u64, DmsError)>,
}

/// What an open hands back: where the file lives and when it is readable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalHandle {
    pub uri: String,
    pub local_path: String,
    pub size_bytes: u64,
    pub ready_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fetched {
    pub bytes: u64,
    pub checksum: Digest,
}

/// Where cache misses are fetched from.
pub trait RemoteRepository: Send + Sync {
    fn fetch(&self, data_ref: &ExternalDataRef) -> Result<Fetched, String>;
}

/// Repository stand-in that returns what the catalog promises, except for
/// URIs marked corrupt. An optional wall-clock delay widens race windows in
/// concurrency tests.
#[derive(Debug, Default)]
pub struct SimRepository {
    corrupt: Mutex<BTreeSet<String>>,
    fetches: AtomicU64,
    delay: Option<std::time::Duration>,
}

impl SimRepository {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_delay(delay: std::time::Duration) -> Self {
        SimRepository { delay: Some(delay), ..Self::default() }
    }

    pub fn corrupt(&self, uri: &str) {
        self.corrupt.lock().insert(uri.to_string());
    }

    pub fn fetch_count(&self) -> u64 {
        self.fetches.load(Ordering::SeqCst)
    }
}

impl RemoteRepository for SimRepository {
    fn fetch(&self, data_ref: &ExternalDataRef) -> Result<Fetched, String> {
        self.fetches.fetch_add(1, Ordering::SeqCst);
        if let Some(d) = self.delay {
            std::thread::sleep(d);
        }
        let checksum = if self.corrupt.lock().contains(&data_ref.uri) {
            Digest::of(format!("corrupted:{}", data_ref.uri).as_bytes())
        } else {
            data_ref.checksum.clone()
        };
        Ok(Fetched { bytes: data_ref.size_bytes, checksum })
    }
}

#[derive(Debug, Default)]
struct State {
    entries: BTreeMap<String, CacheEntry>,
    used: u64,
    access_counter: u64,
}

/// Result of an eager prefetch: transfers made and per-reference failures.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct PrefetchReport {
    pub records: Vec<TransferRecord>,
    pub failures: Vec<(String, DmsError)>,
}

pub struct DmsCache {
    config: CacheConfig,
    catalog: RwLock<DatasetCatalog>,
    repo: Arc<dyn RemoteRepository>,
    log: Arc<TransferLog>,
    state: Mutex<State>,
    changed: Condvar,
}

impl std::fmt::Debug for DmsCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DmsCache").field("config", &self.config).finish_non_exhaustive()
    }
}

impl DmsCache {
    pub fn new(config: CacheConfig, catalog: DatasetCatalog, repo: Arc<dyn RemoteRepository>, log: Arc<TransferLog>) -> Self {
        DmsCache {
            config,
            catalog: RwLock::new(catalog),
            repo,
            log,
            state: Mutex::new(State::default()),
            changed: Condvar::new(),
        }
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn transfer_log(&self) -> &Arc<TransferLog> {
        &self.log
    }

    pub fn register_dataset(&self, uri: &str, size_bytes: u64, checksum: Digest) -> Result<ExternalDataRef, DmsError> {
        Ok(self.catalog.write().register_dataset(uri, size_bytes, checksum)?)
    }

    pub fn lookup(&self, uri: &str) -> Option<ExternalDataRef> {
        self.catalog.read().get(uri).cloned()
    }

    fn local_path(&self, uri: &str) -> String {
        let digest = Digest::of(uri.as_bytes());
        format!("{}/{}", self.config.root.trim_end_matches('/'), &digest.hex()[..16])
    }

    /// Opens `uri`, transferring it first if it is not resident.
    pub fn open(&self, uri: &str, now: SimTime) -> Result<LocalHandle, DmsError> {
        self.open_inner(uri, now).map(|(h, _)| h)
    }

    fn open_inner(&self, uri: &str, now: SimTime) -> Result<(LocalHandle, Option<TransferRecord>), DmsError> {
        let data_ref = self.lookup(uri).ok_or_else(|| DmsError::Unregistered(uri.to_string()))?;
        let local_path = self.local_path(uri);
        let mut st = self.state.lock();
        let mut waited_on: Option<u64> = None;
        loop {
            let entry = st.entries.entry(uri.to_string()).or_insert_with(|| CacheEntry {
                data_ref: data_ref.clone(),
                state: EntryState::Absent,
                local_path: local_path.clone(),
                last_access: SimTime::ZERO,
                pin_count: 0,
                ready_at: SimTime::ZERO,
                access_seq: 0,
                generation: 0,
                failed: None,
            });
            match entry.state {
                EntryState::Resident => {
                    let handle = handle_for(entry);
                    touch(&mut st, uri, now);
                    return Ok((handle, None));
                }
                EntryState::Transferring => {
                    waited_on = Some(entry.generation);
                    self.changed.wait(&mut st);
                }
                EntryState::Absent | EntryState::Evicted => {
                    if let (Some(gen), Some((failed_gen, err))) = (waited_on, &entry.failed) {
                        if gen == *failed_gen {
                            return Err(err.clone());
                        }
                    }
                    return self.transfer(st, &data_ref, now);
                }
            }
        }
    }

    fn transfer(
        &self,
        mut st: MutexGuard<'_, State>,
        data_ref: &ExternalDataRef,
        now: SimTime,
    ) -> Result<(LocalHandle, Option<TransferRecord>), DmsError> {
        let size = data_ref.size_bytes;
        evict_locked(&mut st, self.config.capacity_bytes, size)?;
        st.used += size;
        let generation = {
            let e = st.entries.get_mut(&data_ref.uri).expect("entry inserted by caller");
            e.state = EntryState::Transferring;
            e.generation += 1;
            e.generation
        };

        let fetched = MutexGuard::unlocked(&mut st, || self.repo.fetch(data_ref));

        let result = match fetched {
            Err(cause) => Err(DmsError::Fetch { uri: data_ref.uri.clone(), cause }),
            Ok(f) => {
                let record = TransferRecord {
                    uri: data_ref.uri.clone(),
                    source: TransferSource::RemoteRepo,
                    bytes: f.bytes,
                    resource: None,
                    started: now,
                    finished: now + self.config.transfer_time(f.bytes),
                };
                self.log.append(record.clone());
                if f.checksum == data_ref.checksum {
                    Ok(record)
                } else {
                    Err(DmsError::ChecksumMismatch {
                        uri: data_ref.uri.clone(),
                        expected: data_ref.checksum.clone(),
                        actual: f.checksum,
                    })
                }
            }
        };

        let out = match result {
            Ok(record) => {
                let e = st.entries.get_mut(&data_ref.uri).expect("entry present");
                e.state = EntryState::Resident;
                e.ready_at = record.finished;
                e.failed = None;
                let handle = handle_for(e);
                touch(&mut st, &data_ref.uri, now);
                Ok((handle, Some(record)))
            }
            Err(err) => {
                st.used -= size;
                let e = st.entries.get_mut(&data_ref.uri).expect("entry present");
                e.state = EntryState::Absent;
                e.failed = Some((generation, err.clone()));
                Err(err)
            }
        };
        drop(st);
        self.changed.notify_all();
        out
    }

    /// Eagerly transfers every data reference of `tale` that is not resident.
    pub fn prefetch(&self, tale: &Tale, now: SimTime) -> PrefetchReport {
        let mut report = PrefetchReport::default();
        for r in &tale.data_refs {
            match self.open_inner(&r.uri, now) {
                Ok((_, Some(record))) => report.records.push(record),
                Ok((_, None)) => {}
                Err(e) => report.failures.push((r.uri.clone(), e)),
            }
        }
        report
    }

    /// Frees space until at least `needed_bytes` are available, evicting
    /// least recently used unpinned entries.
    pub fn evict(&self, needed_bytes: u64) -> Result<Vec<String>, DmsError> {
        let mut st = self.state.lock();
        evict_locked(&mut st, self.config.capacity_bytes, needed_bytes)
    }

    pub fn pin(&self, uri: &str) -> Result<(), DmsError> {
        let mut st = self.state.lock();
        match st.entries.get_mut(uri) {
            Some(e) if e.state == EntryState::Resident => {
                e.pin_count += 1;
                Ok(())
            }
            _ => Err(DmsError::NotResident(uri.to_string())),
        }
    }

    pub fn unpin(&self, uri: &str) -> Result<(), DmsError> {
        let mut st = self.state.lock();
        match st.entries.get_mut(uri) {
            Some(e) if e.pin_count > 0 => {
                e.pin_count -= 1;
                Ok(())
            }
            _ => Err(DmsError::NotPinned(uri.to_string())),
        }
    }

    pub fn entry(&self, uri: &str) -> Option<CacheEntry> {
        self.state.lock().entries.get(uri).cloned()
    }

    pub fn state_of(&self, uri: &str) -> EntryState {
        self.state.lock().entries.get(uri).map_or(EntryState::Absent, |e| e.state)
    }

    /// Bytes held by resident and in-flight entries.
    pub fn used_bytes(&self) -> u64 {
        self.state.lock().used
    }

    pub fn resident_uris(&self) -> Vec<String> {
        let st = self.state.lock();
        st.entries.iter().filter(|(_, e)| e.state == EntryState::Resident).map(|(k, _)| k.clone()).collect()
    }
}

fn handle_for(e: &CacheEntry) -> LocalHandle {
    LocalHandle {
        uri: e.data_ref.uri.clone(),
        local_path: e.local_path.clone(),
        size_bytes: e.data_ref.size_bytes,
        ready_at: e.ready_at,
    }
}

fn touch(st: &mut State, uri: &str, now: SimTime) {
    st.access_counter += 1;
    let seq = st.access_counter;
    if let Some(e) = st.entries.get_mut(uri) {
        e.last_access = now;
        e.access_seq = seq;
    }
}

fn evict_locked(st: &mut State, capacity: u64, needed: u64) -> Result<Vec<String>, DmsError> {
    let free = capacity.saturating_sub(st.used);
    if free >= needed {
        return Ok(Vec::new());
    }
    let mut candidates: Vec<(u64, String, u64)> = st
        .entries
        .iter()
        .filter(|(_, e)| e.state == EntryState::Resident && e.pin_count == 0)
        .map(|(uri, e)| (e.access_seq, uri.clone(), e.data_ref.size_bytes))
        .collect();
    let evictable: u64 = candidates.iter().map(|c| c.2).sum();
    if free + evictable < needed {
        return Err(DmsError::Capacity { needed, available: free + evictable, capacity });
    }
    candidates.sort();
    let mut evicted = Vec::new();
    let mut free = free;
    for (_, uri, size) in candidates {
        if free >= needed {
            break;
        }
        let e = st.entries.get_mut(&uri).expect("candidate exists");
        e.state = EntryState::Evicted;
        st.used -= size;
        free += size;
        evicted.push(uri);
    }
    Ok(evicted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cache(capacity: u64, refs: &[(&str, u64)]) -> (DmsCache, Arc<TransferLog>, Arc<SimRepository>) {
        let catalog = DatasetCatalog::from_refs(
            refs.iter().map(|(u, s)| ExternalDataRef::new(*u, *s, Digest::of(u.as_bytes()))),
        )
        .unwrap();
        let log = Arc::new(TransferLog::new());
        let repo = Arc::new(SimRepository::new());
        let cfg = CacheConfig { capacity_bytes: capacity, bandwidth_bytes_per_s: 10.0, root: "/c".into() };
        (DmsCache::new(cfg, catalog, repo.clone(), log.clone()), log, repo)
    }

    #[test]
    fn open_twice_transfers_once() {
        let (c, log, _) = cache(100, &[("a", 10)]);
        let h1 = c.open("a", SimTime::ZERO).unwrap();
        let h2 = c.open("a", SimTime::from_secs(5)).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(h1.ready_at, SimTime::from_secs(1));
        assert_eq!(h2.ready_at, h1.ready_at);
    }

    #[test]
    fn zero_byte_file_is_resident_immediately() {
        let (c, log, _) = cache(100, &[("empty", 0)]);
        let h = c.open("empty", SimTime::from_secs(3)).unwrap();
        assert_eq!(h.ready_at, SimTime::from_secs(3));
        assert_eq!(log.snapshot()[0].bytes, 0);
        assert_eq!(c.state_of("empty"), EntryState::Resident);
    }

    #[test]
    fn lru_evicts_oldest_only() {
        let (c, _, _) = cache(100, &[("A", 60), ("B", 30)]);
        c.open("A", SimTime::from_secs(1)).unwrap();
        c.open("B", SimTime::from_secs(2)).unwrap();
        assert_eq!(c.evict(50).unwrap(), vec!["A".to_string()]);
        assert_eq!(c.state_of("B"), EntryState::Resident);
        assert_eq!(c.used_bytes(), 30);
    }

    #[test]
    fn pinned_entries_are_never_evicted() {
        let (c, _, _) = cache(100, &[("A", 60), ("B", 30)]);
        c.open("A", SimTime::ZERO).unwrap();
        c.open("B", SimTime::ZERO).unwrap();
        c.pin("A").unwrap();
        c.pin("B").unwrap();
        assert!(matches!(c.evict(50), Err(DmsError::Capacity { .. })));
        assert!(c.evict(0).unwrap().is_empty());
        assert_eq!(c.resident_uris().len(), 2);
        c.unpin("B").unwrap();
        assert!(c.unpin("B").is_err());
    }

    #[test]
    fn oversized_file_is_a_capacity_error() {
        let (c, log, _) = cache(10, &[("big", 11)]);
        assert!(matches!(c.open("big", SimTime::ZERO), Err(DmsError::Capacity { needed: 11, .. })));
        assert!(log.is_empty());
        assert_eq!(c.used_bytes(), 0);
    }

    #[test]
    fn corrupted_transfer_is_discarded() {
        let (c, log, repo) = cache(100, &[("a", 5)]);
        repo.corrupt("a");
        assert!(matches!(c.open("a", SimTime::ZERO), Err(DmsError::ChecksumMismatch { .. })));
        assert_eq!(c.state_of("a"), EntryState::Absent);
        assert_eq!(c.used_bytes(), 0);
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn unregistered_open_fails() {
        let (c, _, _) = cache(100, &[]);
        assert_eq!(c.open("nope", SimTime::ZERO).unwrap_err(), DmsError::Unregistered("nope".into()));
        c.register_dataset("nope", 1, Digest::of(b"nope")).unwrap();
        assert!(c.open("nope", SimTime::ZERO).is_ok());
    }

    #[test]
    fn prefetch_then_evict_then_open_retransfers_once() {
        let (c, log, _) = cache(100, &[("x", 10), ("y", 10), ("z", 10)]);
        let refs: Vec<_> = ["x", "y", "z"].iter().map(|u| c.lookup(u).unwrap()).collect();
        let tale = Tale::create(
            crate::tale::TaleId::new("t").unwrap(),
            "t",
            vec![],
            refs,
            crate::tale::EnvironmentSpec::new("img"),
            0,
        )
        .unwrap();
        let report = c.prefetch(&tale, SimTime::ZERO);
        assert_eq!(report.records.len(), 3);
        assert!(report.failures.is_empty());
        assert!(c.prefetch(&tale, SimTime::ZERO).records.is_empty());
        for u in ["x", "y", "z"] {
            c.open(u, SimTime::from_secs(10)).unwrap();
        }
        assert_eq!(log.len(), 3);
        assert_eq!(c.evict(100 - 20).unwrap(), vec!["x".to_string()]);
        c.open("x", SimTime::from_secs(20)).unwrap();
        assert_eq!(log.len(), 4);
    }

    #[test]
    fn concurrent_opens_coalesce() {
        let catalog = DatasetCatalog::from_refs([ExternalDataRef::new("shared", 7, Digest::of(b"shared"))]).unwrap();
        let log = Arc::new(TransferLog::new());
        let repo = Arc::new(SimRepository::with_delay(std::time::Duration::from_millis(50)));
        let c = Arc::new(DmsCache::new(CacheConfig::default(), catalog, repo.clone(), log.clone()));
        let handles: Vec<_> = (0..10)
            .map(|_| {
                let c = c.clone();
                std::thread::spawn(move || c.open("shared", SimTime::ZERO))
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(results.iter().all(Result::is_ok));
        assert_eq!(log.len(), 1);
        assert_eq!(repo.fetch_count(), 1);
    }
}
