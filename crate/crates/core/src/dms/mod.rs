//! The data management system: brings externally referenced data next to
//! the computation, once.
//!
//! Data reaches a consumer by one of three staging actions. A dataset already
//! on the consumer's resource behind a POSIX file system is mounted in place.
//! One behind a non-POSIX interface is staged in by a local copy on that
//! resource. Anything else goes through the shared cache, which transfers
//! each file from its repository at most once while it stays resident.

mod cache;
mod catalog;
mod staging;
mod transfer;

pub use cache::{
    CacheConfig, CacheEntry, DmsCache, EntryState, Fetched, LocalHandle, PrefetchReport, RemoteRepository, SimRepository,
};
pub use catalog::{parse_data_refs, CatalogError, DatasetCatalog, ExternalDataRef};
pub use staging::{resolve_local, DataManager, StagingAction, StagingKind, StagingOutcome};
pub use transfer::{TransferLog, TransferRecord, TransferSource};

use crate::digest::Digest;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum DmsError {
    #[error("dataset {0} is not registered")]
    Unregistered(String),
    #[error("checksum mismatch for {uri}: expected {expected}, received {actual}")]
    ChecksumMismatch { uri: String, expected: Digest, actual: Digest },
    #[error("cache cannot admit {needed} bytes: {available} bytes free or evictable of {capacity}")]
    Capacity { needed: u64, available: u64, capacity: u64 },
    #[error("fetch of {uri} failed: {cause}")]
    Fetch { uri: String, cause: String },
    #[error("{0} is not pinned")]
    NotPinned(String),
    #[error("{0} is not resident")]
    NotResident(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}
