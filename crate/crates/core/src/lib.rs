//! Orchestration middleware for executable research objects ("Tales") on
//! shared clusters, together with a deterministic discrete-event simulator
//! that every component runs against.
//!
//! The crate is organised by subsystem:
//!
//! * [`tale`]: the Tale data model, archive format, provenance log and
//!   packaging strategies.
//! * [`planner`]: feasibility of the six execution models and placement.
//! * [`lrm`]: asynchronous batch-system middleware with pluggable dialects,
//!   aggregated polling and session reuse.
//! * [`pilot`]: pools of placeholder jobs that absorb queue wait.
//! * [`dms`]: the data cache, staging decisions and transfer accounting.
//! * [`proxy`]: routing of frontend traffic to connection-restricted nodes.
//! * [`sim`]: the simulated clusters, scenario runner and reports.

pub mod digest;
pub mod dms;
pub mod lrm;
pub mod pilot;
pub mod planner;
pub mod proxy;
pub mod sim;
pub mod tale;
pub mod time;

pub use digest::{Digest, DigestAlgorithm};
pub use time::{Clock, ManualClock, SimDuration, SimTime};
