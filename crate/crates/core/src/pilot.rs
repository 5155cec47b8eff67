//! Pools of placeholder batch jobs that absorb queue wait.
//!
//! A pilot is an ordinary batch job. Once it runs, its slot is warm and a
//! real workload can be dispatched into it at once instead of waiting in
//! the queue. Each slot serves at most one workload.

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::lrm::{JobHandle, JobId, JobSpec, JobState, LrmError, Middleware};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolPolicy {
    pub resource: String,
    pub min_warm: usize,
    pub max_size: usize,
    pub pilot_walltime: SimDuration,
    /// Replenish only once warm plus pending slots fall to this level.
    /// Defaults to `min_warm`, which tops up after every claim.
    #[serde(default)]
    pub replenish_threshold: Option<usize>,
    #[serde(default = "default_credential")]
    pub credential: String,
    #[serde(default = "one")]
    pub pilot_nodes: u32,
    /// Time from claim to the workload running inside the pilot.
    #[serde(default = "default_dispatch")]
    pub dispatch_overhead: SimDuration,
}

fn default_credential() -> String {
    "pilot".into()
}

fn one() -> u32 {
    1
}

fn default_dispatch() -> SimDuration {
    SimDuration::from_millis(500)
}

impl PoolPolicy {
    pub fn new(resource: impl Into<String>, min_warm: usize, max_size: usize, pilot_walltime: SimDuration) -> Self {
        PoolPolicy {
            resource: resource.into(),
            min_warm,
            max_size,
            pilot_walltime,
            replenish_threshold: None,
            credential: default_credential(),
            pilot_nodes: 1,
            dispatch_overhead: default_dispatch(),
        }
    }

    pub fn threshold(&self) -> usize {
        self.replenish_threshold.unwrap_or(self.min_warm)
    }

    pub fn validate(&self) -> Result<(), PoolError> {
        let bad = |m: String| Err(PoolError::InvalidPolicy(m));
        if self.max_size < self.min_warm {
            return bad(format!("max_size {} is below min_warm {}", self.max_size, self.min_warm));
        }
        if self.threshold() > self.min_warm {
            return bad(format!("replenish_threshold {} exceeds min_warm {}", self.threshold(), self.min_warm));
        }
        if self.pilot_walltime.is_zero() {
            return bad("pilot_walltime must be positive".into());
        }
        if self.pilot_nodes == 0 {
            return bad("pilot_nodes must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PoolError {
    #[error("invalid pool policy: {0}")]
    InvalidPolicy(String),
    #[error("pool serves {pool}; workload targets {workload}")]
    ResourceMismatch { pool: String, workload: String },
    #[error("workload needs {needed} nodes; pilots hold {held}")]
    DoesNotFit { needed: u32, held: u32 },
    #[error("unknown pilot {0}")]
    UnknownSlot(JobId),
    #[error("pilot {0} is not claimed")]
    NotClaimed(JobId),
    #[error(transparent)]
    Middleware(#[from] LrmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotState {
    Pending,
    Warm,
    Claimed,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PilotSlot {
    pub pilot_job: JobHandle,
    pub state: SlotState,
    pub claimed_by: Option<String>,
    pub warm_since: Option<SimTime>,
    pub claimed_at: Option<SimTime>,
    pub expired_at: Option<SimTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PoolCounts {
    pub pending: usize,
    pub warm: usize,
    pub claimed: usize,
    pub expired: usize,
    pub submitted: usize,
    pub submit_failures: usize,
}

/// A successful claim: the workload starts at `start_at`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Claim {
    pub slot: PilotSlot,
    pub start_at: SimTime,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TickReport {
    pub warmed: Vec<JobId>,
    pub expired: Vec<JobId>,
    pub submitted: Vec<JobHandle>,
}

#[derive(Debug, Default)]
struct PoolInner {
    slots: BTreeMap<JobId, PilotSlot>,
    submit_failures: usize,
}

#[derive(Debug)]
pub struct PilotPool {
    policy: PoolPolicy,
    middleware: Arc<Middleware>,
    inner: Mutex<PoolInner>,
}

impl PilotPool {
    /// Validates the policy and submits the initial pilots.
    pub fn configure(policy: PoolPolicy, middleware: Arc<Middleware>) -> Result<Self, PoolError> {
        policy.validate()?;
        if !middleware.has_resource(&policy.resource) {
            return Err(PoolError::Middleware(LrmError::UnknownResource(policy.resource.clone())));
        }
        let pool = PilotPool { policy, middleware, inner: Mutex::new(PoolInner::default()) };
        pool.replenish();
        Ok(pool)
    }

    pub fn policy(&self) -> &PoolPolicy {
        &self.policy
    }

    pub fn counts(&self) -> PoolCounts {
        let inner = self.inner.lock();
        let mut c = PoolCounts { submitted: inner.slots.len(), submit_failures: inner.submit_failures, ..Default::default() };
        for s in inner.slots.values() {
            match s.state {
                SlotState::Pending => c.pending += 1,
                SlotState::Warm => c.warm += 1,
                SlotState::Claimed => c.claimed += 1,
                SlotState::Expired => c.expired += 1,
            }
        }
        c
    }

    pub fn slots(&self) -> Vec<PilotSlot> {
        self.inner.lock().slots.values().cloned().collect()
    }

    pub fn slot(&self, pilot: JobId) -> Option<PilotSlot> {
        self.inner.lock().slots.get(&pilot).cloned()
    }

    /// Reads pilot job states from the middleware's local cache.
    fn sync(&self, inner: &mut PoolInner, report: &mut TickReport) {
        for (id, slot) in inner.slots.iter_mut() {
            if slot.state == SlotState::Expired {
                continue;
            }
            let Ok(status) = self.middleware.status(*id) else { continue };
            if status.state.is_terminal() {
                slot.state = SlotState::Expired;
                slot.expired_at = status.history.last().map(|&(_, t)| t);
                report.expired.push(*id);
            } else if status.state == JobState::Running && slot.state == SlotState::Pending {
                slot.state = SlotState::Warm;
                slot.warm_since = status.entered(JobState::Running);
                report.warmed.push(*id);
            }
        }
    }

    fn replenish_locked(&self, inner: &mut PoolInner) -> Vec<JobHandle> {
        let live = |s: SlotState| inner.slots.values().filter(|x| x.state == s).count();
        let ready = live(SlotState::Pending) + live(SlotState::Warm);
        let claimed = live(SlotState::Claimed);
        if ready >= self.policy.min_warm || ready > self.policy.threshold() {
            return Vec::new();
        }
        let room = self.policy.max_size.saturating_sub(ready + claimed);
        let wanted = (self.policy.min_warm - ready).min(room);
        let mut out = Vec::new();
        for _ in 0..wanted {
            let walltime = self.policy.pilot_walltime.to_decimal();
            let mut spec = JobSpec::new(&self.policy.resource, &self.policy.credential, &["pilot", &walltime]);
            spec.node_count = self.policy.pilot_nodes;
            spec.env.insert("TALESCALE_PILOT".into(), "1".into());
            match self.middleware.submit(spec) {
                Ok(handle) => {
                    let failed = self.middleware.status(handle.job_id).map(|s| s.state == JobState::Failed).unwrap_or(true);
                    let now = self.middleware.now();
                    inner.slots.insert(
                        handle.job_id,
                        PilotSlot {
                            pilot_job: handle.clone(),
                            state: if failed { SlotState::Expired } else { SlotState::Pending },
                            claimed_by: None,
                            warm_since: None,
                            claimed_at: None,
                            expired_at: failed.then_some(now),
                        },
                    );
                    if failed {
                        inner.submit_failures += 1;
                        break;
                    }
                    out.push(handle);
                }
                Err(_) => {
                    // retried on the next tick
                    inner.submit_failures += 1;
                    break;
                }
            }
        }
        out
    }

    /// Submits pilots until warm plus pending reaches `min_warm`, never
    /// exceeding `max_size` live slots.
    pub fn replenish(&self) -> Vec<JobHandle> {
        let mut inner = self.inner.lock();
        self.replenish_locked(&mut inner)
    }

    /// Takes the longest-warm slot for `workload`, or returns `None` when no
    /// slot is warm and the caller should submit directly.
    pub fn claim(&self, workload: &JobSpec, claimant: &str) -> Result<Option<Claim>, PoolError> {
        if workload.resource != self.policy.resource {
            return Err(PoolError::ResourceMismatch { pool: self.policy.resource.clone(), workload: workload.resource.clone() });
        }
        if workload.node_count > self.policy.pilot_nodes {
            return Err(PoolError::DoesNotFit { needed: workload.node_count, held: self.policy.pilot_nodes });
        }
        let mut inner = self.inner.lock();
        self.sync(&mut inner, &mut TickReport::default());
        let now = self.middleware.now();
        let pick = inner
            .slots
            .iter()
            .filter(|(_, s)| s.state == SlotState::Warm)
            .min_by_key(|(id, s)| (s.warm_since, **id))
            .map(|(id, _)| *id);
        let Some(id) = pick else { return Ok(None) };
        let slot = inner.slots.get_mut(&id).expect("picked");
        slot.state = SlotState::Claimed;
        slot.claimed_by = Some(claimant.to_string());
        slot.claimed_at = Some(now);
        let slot = slot.clone();
        self.replenish_locked(&mut inner);
        Ok(Some(Claim { slot, start_at: now + self.policy.dispatch_overhead }))
    }

    /// The workload in a claimed slot finished; the pilot is cancelled and
    /// the slot retired.
    pub fn release(&self, pilot: JobId) -> Result<(), PoolError> {
        let mut inner = self.inner.lock();
        let slot = inner.slots.get_mut(&pilot).ok_or(PoolError::UnknownSlot(pilot))?;
        if slot.state != SlotState::Claimed {
            return Err(PoolError::NotClaimed(pilot));
        }
        slot.state = SlotState::Expired;
        slot.expired_at = Some(self.middleware.now());
        drop(inner);
        self.middleware.cancel(pilot)?;
        Ok(())
    }

    /// Retires warm slots older than the pilot walltime. Claimed slots are
    /// never retired here.
    pub fn expire(&self, now: SimTime) -> Vec<PilotSlot> {
        let mut inner = self.inner.lock();
        let mut report = TickReport::default();
        self.sync(&mut inner, &mut report);
        let mut out = Vec::new();
        for slot in inner.slots.values_mut() {
            if slot.state == SlotState::Warm && slot.warm_since.is_some_and(|w| now.since(w) > self.policy.pilot_walltime) {
                slot.state = SlotState::Expired;
                slot.expired_at = Some(now);
                out.push(slot.clone());
            }
        }
        self.replenish_locked(&mut inner);
        out
    }

    /// Sync with the middleware, retire old pilots and top up, on the
    /// poller's cadence.
    pub fn tick(&self) -> TickReport {
        let now = self.middleware.now();
        let mut inner = self.inner.lock();
        let mut report = TickReport::default();
        self.sync(&mut inner, &mut report);
        for (id, slot) in inner.slots.iter_mut() {
            if slot.state == SlotState::Warm && slot.warm_since.is_some_and(|w| now.since(w) > self.policy.pilot_walltime) {
                slot.state = SlotState::Expired;
                slot.expired_at = Some(now);
                report.expired.push(*id);
            }
        }
        report.submitted = self.replenish_locked(&mut inner);
        report
    }
}
