//! Asynchronous job middleware over batch systems.
//!
//! Clients submit, cancel, query and subscribe through one shared
//! [`Middleware`]. Submission returns after a single remote call and never
//! waits for the job to queue or run. Job state is learned by one
//! aggregated status query per resource and poll cycle, over sessions kept
//! open per (resource, credential) pair. Batch-system syntax lives in
//! [`LrmDialect`] adapters so the internal API stays fixed.

mod dialect;
mod job;
mod middleware;
mod session;
mod transport;

pub use dialect::{DialectError, LrmDialect, NativeState, NativeStatus, PbsDialect, SlurmDialect, PBS_DELETED_EXIT};
pub use job::{is_legal, IllegalTransition, JobHandle, JobId, JobSpec, JobState, JobStatus, Transition};
pub use middleware::{CancelAck, JobInfo, Middleware, MiddlewareConfig, MiddlewareCounters};
pub use session::{Session, SessionConfig, SessionPool};
pub use transport::{count_rendered, Reply, Transport, TransportCall, TransportError, TransportLog, Verb};

use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LrmError {
    #[error("unknown resource {0}")]
    UnknownResource(String),
    #[error("resource {0} declares no batch dialect")]
    NoDialect(String),
    #[error("resource {resource} uses unregistered dialect {dialect}")]
    UnregisteredDialect { resource: String, dialect: String },
    #[error("dialect {0} is already registered")]
    DuplicateDialect(String),
    #[error("unknown credential {0}")]
    UnknownCredential(String),
    #[error("resource {0} is not MPI-capable")]
    NotMpiCapable(String),
    #[error("{resource} has {available} nodes; job requests {requested}")]
    TooManyNodes { resource: String, requested: u32, available: u32 },
    #[error("invalid job: {0}")]
    InvalidSpec(String),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("handshake with {resource} as {credential} failed: {cause}")]
    Handshake { resource: String, credential: String, cause: String },
    #[error("{resource} as {credential} is backing off until {until} after: {cause}")]
    Unhealthy { resource: String, credential: String, until: SimTime, cause: String },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Dialect(#[from] DialectError),
}
