use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::dialect::{LrmDialect, NativeState, NativeStatus};
use super::job::{JobHandle, JobId, JobSpec, JobState, JobStatus, Transition};
use super::session::{Session, SessionConfig, SessionPool};
use super::transport::{Transport, TransportCall, TransportLog, Verb};
use super::LrmError;
use crate::digest::Digest;
use crate::planner::ResourceDescriptor;
use crate::tale::{ProvenanceKind, TaleId, TaleStore};
use crate::time::{Clock, SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiddlewareConfig {
    pub sessions: SessionConfig,
    pub poll_interval: SimDuration,
    /// Count poll cycles that found no active jobs. They never query the
    /// backend either way.
    pub count_empty_cycles: bool,
}

impl Default for MiddlewareConfig {
    fn default() -> Self {
        MiddlewareConfig {
            sessions: SessionConfig::default(),
            poll_interval: SimDuration::from_secs(5),
            count_empty_cycles: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MiddlewareCounters {
    pub submits: u64,
    pub submit_failures: u64,
    pub cancels: u64,
    pub backend_queries: u64,
    pub poll_cycles: u64,
    pub poll_failures: u64,
    pub handshakes: u64,
    pub handshake_failures: u64,
    pub illegal_transitions: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CancelAck {
    /// The cancel command was sent; the state changes when a poll confirms it.
    Requested,
    /// Nothing to do.
    AlreadyTerminal(JobState),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobInfo {
    pub spec: JobSpec,
    pub handle: JobHandle,
    pub native_id: Option<String>,
    pub status: JobStatus,
}

#[derive(Debug, Clone)]
struct Binding {
    dialect: String,
    mpi_capable: bool,
    node_count: u32,
}

struct JobRecord {
    info: JobInfo,
    subscribers: Vec<Sender<Transition>>,
}

#[derive(Default)]
struct JobTable {
    next_id: u64,
    jobs: BTreeMap<JobId, JobRecord>,
    /// Non-terminal jobs per resource.
    active: BTreeMap<String, BTreeSet<JobId>>,
    journal: Vec<Transition>,
}

struct Emitted {
    transition: Transition,
    tale: Option<TaleId>,
}

impl JobTable {
    /// Applies one legal step, notifies subscribers and journals it.
    fn step(&mut self, id: JobId, to: JobState, at: SimTime, now: SimTime, counters: &Mutex<MiddlewareCounters>) -> Option<Emitted> {
        let rec = self.jobs.get_mut(&id)?;
        let from = rec.info.status.state;
        let at = match rec.info.status.advance(to, at) {
            Ok(at) => at,
            Err(_) => {
                counters.lock().illegal_transitions += 1;
                return None;
            }
        };
        let transition = Transition { job_id: id, from, to, at, observed_at: now };
        rec.subscribers.retain(|s| s.send(transition.clone()).is_ok());
        if to.is_terminal() {
            rec.subscribers.clear();
            if let Some(set) = self.active.get_mut(&rec.info.handle.resource) {
                set.remove(&id);
                if set.is_empty() {
                    self.active.remove(&rec.info.handle.resource);
                }
            }
        }
        let tale = rec.info.spec.tale_id.clone();
        self.journal.push(transition.clone());
        Some(Emitted { transition, tale })
    }
}

/// The shared job service. Callers submit, query, cancel and subscribe;
/// state changes are learned only through aggregated per-resource polls.
pub struct Middleware {
    clock: Arc<dyn Clock>,
    transport: Arc<dyn Transport>,
    log: Arc<TransportLog>,
    sessions: SessionPool,
    config: MiddlewareConfig,
    dialects: RwLock<BTreeMap<String, Arc<dyn LrmDialect>>>,
    resources: RwLock<BTreeMap<String, Binding>>,
    credentials: RwLock<BTreeSet<String>>,
    table: Mutex<JobTable>,
    counters: Mutex<MiddlewareCounters>,
    provenance: Option<Arc<TaleStore>>,
}

impl std::fmt::Debug for Middleware {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Middleware").field("config", &self.config).field("counters", &self.counters()).finish()
    }
}

impl Middleware {
    pub fn new(clock: Arc<dyn Clock>, transport: Arc<dyn Transport>, config: MiddlewareConfig) -> Self {
        Middleware {
            clock,
            transport,
            log: Arc::new(TransportLog::new()),
            sessions: SessionPool::new(config.sessions),
            config,
            dialects: RwLock::new(BTreeMap::new()),
            resources: RwLock::new(BTreeMap::new()),
            credentials: RwLock::new(BTreeSet::new()),
            table: Mutex::new(JobTable { next_id: 1, ..Default::default() }),
            counters: Mutex::new(MiddlewareCounters::default()),
            provenance: None,
        }
    }

    /// Records job events into the provenance log of the owning Tale.
    pub fn with_provenance(mut self, store: Arc<TaleStore>) -> Self {
        self.provenance = Some(store);
        self
    }

    pub fn config(&self) -> &MiddlewareConfig {
        &self.config
    }

    pub fn transport_log(&self) -> &Arc<TransportLog> {
        &self.log
    }

    pub fn register_dialect(&self, name: &str, adapter: Arc<dyn LrmDialect>) -> Result<(), LrmError> {
        let mut d = self.dialects.write();
        if d.contains_key(name) {
            return Err(LrmError::DuplicateDialect(name.into()));
        }
        d.insert(name.into(), adapter);
        Ok(())
    }

    /// Makes a batch resource addressable. Its dialect may be registered later.
    pub fn register_resource(&self, resource: &ResourceDescriptor) -> Result<(), LrmError> {
        let dialect = resource.dialect.clone().ok_or_else(|| LrmError::NoDialect(resource.name.clone()))?;
        self.resources.write().insert(
            resource.name.clone(),
            Binding { dialect, mpi_capable: resource.mpi_capable, node_count: resource.node_count },
        );
        Ok(())
    }

    pub fn has_resource(&self, name: &str) -> bool {
        self.resources.read().contains_key(name)
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    pub fn register_credential(&self, name: &str) {
        self.credentials.write().insert(name.into());
    }

    fn dialect_for(&self, resource: &str) -> Result<(Binding, Arc<dyn LrmDialect>), LrmError> {
        let binding = self.resources.read().get(resource).cloned().ok_or_else(|| LrmError::UnknownResource(resource.into()))?;
        let dialect = self.dialects.read().get(&binding.dialect).cloned().ok_or_else(|| LrmError::UnregisteredDialect {
            resource: resource.into(),
            dialect: binding.dialect.clone(),
        })?;
        Ok((binding, dialect))
    }

    pub fn acquire_session(&self, resource: &str, credential: &str) -> Result<Session, LrmError> {
        if !self.credentials.read().contains(credential) {
            return Err(LrmError::UnknownCredential(credential.into()));
        }
        self.sessions.acquire(&*self.transport, &self.log, resource, credential, self.clock.now()).map(|(s, _)| s)
    }

    pub fn live_sessions(&self) -> Vec<Session> {
        self.sessions.live_sessions(self.clock.now())
    }

    fn call(&self, resource: &str, credential: &str, verb: Verb, command: &str, now: SimTime) -> Result<(String, SimDuration), LrmError> {
        let (_, handshake) = self.sessions.acquire(&*self.transport, &self.log, resource, credential, now)?;
        let result = self.transport.execute(resource, credential, command, now);
        self.log.record(TransportCall {
            time: now,
            resource: resource.into(),
            credential: credential.into(),
            verb,
            payload_digest: Digest::of(command.as_bytes()),
            ok: result.is_ok(),
        });
        match result {
            Ok(reply) => Ok((reply.output, handshake + reply.elapsed)),
            Err(e) => {
                self.sessions.invalidate(resource, credential);
                Err(LrmError::Transport(e))
            }
        }
    }

    fn record_provenance(&self, emitted: &[Emitted]) {
        let Some(store) = &self.provenance else { return };
        for e in emitted {
            let Some(tale) = &e.tale else { continue };
            let t = &e.transition;
            let (kind, payload) = if t.from == JobState::Created {
                (ProvenanceKind::JobSubmitted, json!({"job_id": t.job_id, "state": t.to}))
            } else {
                (ProvenanceKind::JobStateChange, json!({"job_id": t.job_id, "from": t.from, "to": t.to}))
            };
            let payload = payload.as_object().map(|m| m.clone().into_iter().collect()).unwrap_or_default();
            // a Tale missing from the store is not the job's problem
            let _ = store.record(tale, kind, payload, t.at.as_micros());
        }
    }

    /// Hands the job to the resource's batch system and returns without
    /// waiting for it to queue or run.
    pub fn submit(&self, spec: JobSpec) -> Result<JobHandle, LrmError> {
        let now = self.clock.now();
        let (binding, dialect) = self.dialect_for(&spec.resource)?;
        if !self.credentials.read().contains(&spec.credential) {
            return Err(LrmError::UnknownCredential(spec.credential.clone()));
        }
        if spec.command.is_empty() {
            return Err(LrmError::InvalidSpec("empty command".into()));
        }
        if spec.node_count == 0 {
            return Err(LrmError::InvalidSpec("node_count must be at least 1".into()));
        }
        if spec.mpi && !binding.mpi_capable {
            return Err(LrmError::NotMpiCapable(spec.resource.clone()));
        }
        if spec.node_count > binding.node_count {
            return Err(LrmError::TooManyNodes {
                resource: spec.resource.clone(),
                requested: spec.node_count,
                available: binding.node_count,
            });
        }

        let mut emitted = Vec::new();
        let id = {
            let mut t = self.table.lock();
            let id = JobId(t.next_id);
            t.next_id += 1;
            let handle = JobHandle { job_id: id, resource: spec.resource.clone(), submitted_at: now, return_latency: SimDuration::ZERO };
            let info = JobInfo { spec: spec.clone(), handle, native_id: None, status: JobStatus::created(now) };
            t.jobs.insert(id, JobRecord { info, subscribers: Vec::new() });
            t.active.entry(spec.resource.clone()).or_default().insert(id);
            emitted.extend(t.step(id, JobState::Submitted, now, now, &self.counters));
            id
        };
        self.counters.lock().submits += 1;

        let command = dialect.submit_command(id, &spec);
        let outcome = self
            .call(&spec.resource, &spec.credential, Verb::Submit, &command, now)
            .and_then(|(out, latency)| dialect.parse_submit(&out).map(|n| (n, latency)).map_err(LrmError::Dialect));

        let handle = {
            let mut t = self.table.lock();
            match &outcome {
                Ok((native, latency)) => {
                    let rec = t.jobs.get_mut(&id).expect("job just inserted");
                    rec.info.native_id = Some(native.clone());
                    rec.info.handle.return_latency = *latency;
                }
                Err(e) => {
                    self.counters.lock().submit_failures += 1;
                    if let Some(rec) = t.jobs.get_mut(&id) {
                        rec.info.status.cause = Some(e.to_string());
                    }
                    emitted.extend(t.step(id, JobState::Failed, now, now, &self.counters));
                }
            }
            t.jobs[&id].info.handle.clone()
        };
        self.record_provenance(&emitted);
        Ok(handle)
    }

    /// Answered from local state; never contacts the backend.
    pub fn status(&self, id: JobId) -> Result<JobStatus, LrmError> {
        self.table.lock().jobs.get(&id).map(|r| r.info.status.clone()).ok_or(LrmError::UnknownJob(id))
    }

    pub fn job(&self, id: JobId) -> Result<JobInfo, LrmError> {
        self.table.lock().jobs.get(&id).map(|r| r.info.clone()).ok_or(LrmError::UnknownJob(id))
    }

    pub fn job_ids(&self) -> Vec<JobId> {
        self.table.lock().jobs.keys().copied().collect()
    }

    /// Streams every later transition of the job, in order. A finished job
    /// yields its final transition and the stream ends.
    pub fn subscribe(&self, id: JobId) -> Result<Receiver<Transition>, LrmError> {
        let mut t = self.table.lock();
        let rec = t.jobs.get_mut(&id).ok_or(LrmError::UnknownJob(id))?;
        let (tx, rx) = channel();
        let status = &rec.info.status;
        if status.state.is_terminal() {
            let n = status.history.len();
            let (to, at) = status.history[n - 1];
            let from = status.history[n - 2].0;
            let _ = tx.send(Transition { job_id: id, from, to, at, observed_at: at });
        } else {
            rec.subscribers.push(tx);
        }
        Ok(rx)
    }

    /// Sends the cancel command. The job becomes Canceled once a poll
    /// confirms it; cancelling a finished job is a no-op.
    pub fn cancel(&self, id: JobId) -> Result<CancelAck, LrmError> {
        let info = self.job(id)?;
        if info.status.state.is_terminal() {
            return Ok(CancelAck::AlreadyTerminal(info.status.state));
        }
        let native = info.native_id.ok_or_else(|| LrmError::InvalidSpec(format!("{id} has no batch id")))?;
        let (_, dialect) = self.dialect_for(&info.spec.resource)?;
        let now = self.clock.now();
        self.counters.lock().cancels += 1;
        self.call(&info.spec.resource, &info.spec.credential, Verb::Cancel, &dialect.cancel_command(&native), now)?;
        Ok(CancelAck::Requested)
    }

    /// Resources with at least one non-terminal job. Each has exactly one
    /// poller; nothing else polls.
    pub fn active_resources(&self) -> Vec<String> {
        self.table.lock().active.keys().cloned().collect()
    }

    pub fn active_pollers(&self) -> usize {
        self.table.lock().active.len()
    }

    pub fn active_jobs(&self, resource: &str) -> usize {
        self.table.lock().active.get(resource).map_or(0, BTreeSet::len)
    }

    /// One poll cycle for every resource with active jobs.
    pub fn poll_all(&self) -> Vec<Transition> {
        let mut out = Vec::new();
        for r in self.active_resources() {
            if let Ok(ts) = self.poll_cycle(&r) {
                out.extend(ts);
            }
        }
        out
    }

    /// Queries the batch status of all non-terminal jobs on `resource` with
    /// a single backend command and applies the result. Transport failures
    /// leave every job unchanged for the next cycle.
    pub fn poll_cycle(&self, resource: &str) -> Result<Vec<Transition>, LrmError> {
        let now = self.clock.now();
        let (_, dialect) = self.dialect_for(resource)?;
        let pending: Vec<(JobId, String, String)> = {
            let t = self.table.lock();
            t.active
                .get(resource)
                .into_iter()
                .flatten()
                .filter_map(|id| {
                    let info = &t.jobs[id].info;
                    info.native_id.clone().map(|n| (*id, n, info.spec.credential.clone()))
                })
                .collect()
        };
        if pending.is_empty() {
            if self.config.count_empty_cycles {
                self.counters.lock().poll_cycles += 1;
            }
            return Ok(Vec::new());
        }
        let credential = pending.iter().map(|p| p.2.as_str()).min().expect("nonempty").to_string();
        let natives: Vec<String> = pending.iter().map(|p| p.1.clone()).collect();
        {
            let mut c = self.counters.lock();
            c.poll_cycles += 1;
            c.backend_queries += 1;
        }
        let command = dialect.batch_status_command(&natives);
        let parsed = self
            .call(resource, &credential, Verb::BatchStatus, &command, now)
            .and_then(|(out, _)| dialect.parse_batch_status(&out).map_err(LrmError::Dialect));
        let statuses = match parsed {
            Ok(s) => s,
            Err(_) => {
                self.counters.lock().poll_failures += 1;
                return Ok(Vec::new());
            }
        };

        let by_native: BTreeMap<&str, JobId> = pending.iter().map(|(id, n, _)| (n.as_str(), *id)).collect();
        let mut emitted = Vec::new();
        {
            let mut t = self.table.lock();
            for ns in &statuses {
                let Some(&id) = by_native.get(ns.native_id.as_str()) else { continue };
                let current = t.jobs[&id].info.status.state;
                let (steps, exit) = plan_steps(current, ns, now);
                if let Some(code) = exit {
                    t.jobs.get_mut(&id).expect("known job").info.status.exit_code = Some(code);
                }
                for (to, at) in steps {
                    emitted.extend(t.step(id, to, at, now, &self.counters));
                }
            }
        }
        self.record_provenance(&emitted);
        Ok(emitted.into_iter().map(|e| e.transition).collect())
    }

    /// Takes all transitions recorded since the previous call.
    pub fn drain_transitions(&self) -> Vec<Transition> {
        std::mem::take(&mut self.table.lock().journal)
    }

    pub fn counters(&self) -> MiddlewareCounters {
        let mut c = *self.counters.lock();
        c.handshakes = self.sessions.handshake_count();
        c.handshake_failures = self.sessions.handshake_failures();
        c
    }
}

fn rank(s: JobState) -> u8 {
    match s {
        JobState::Created => 0,
        JobState::Submitted => 1,
        JobState::Queued => 2,
        JobState::Running => 3,
        _ => 4,
    }
}

/// The legal steps from `current` to the state the backend reports, with
/// the backend's timestamps where it gave them.
fn plan_steps(current: JobState, ns: &NativeStatus, now: SimTime) -> (Vec<(JobState, SimTime)>, Option<i32>) {
    let queued = (JobState::Queued, ns.queued_at.unwrap_or(now));
    let running = (JobState::Running, ns.started_at.or(ns.ended_at).unwrap_or(now));
    let ended = ns.ended_at.unwrap_or(now);
    let (path, exit) = match ns.state {
        NativeState::Queued | NativeState::Held => (vec![queued], None),
        NativeState::Running => (vec![queued, running], None),
        NativeState::Exited(code) => {
            let last = if code == 0 { JobState::Completed } else { JobState::Failed };
            (vec![queued, running, (last, ended)], Some(code))
        }
        NativeState::Canceled if ns.started_at.is_some() => (vec![queued, running, (JobState::Canceled, ended)], None),
        NativeState::Canceled => (vec![queued, (JobState::Canceled, ended)], None),
    };
    if current.is_terminal() {
        return (Vec::new(), None);
    }
    (path.into_iter().filter(|(s, _)| s.is_terminal() || rank(*s) > rank(current)).collect(), exit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ns(state: NativeState, q: Option<u64>, s: Option<u64>, e: Option<u64>) -> NativeStatus {
        NativeStatus {
            native_id: "1".into(),
            state,
            queued_at: q.map(SimTime::from_secs),
            started_at: s.map(SimTime::from_secs),
            ended_at: e.map(SimTime::from_secs),
        }
    }

    #[test]
    fn steps_fill_in_skipped_states() {
        let now = SimTime::from_secs(100);
        let (steps, exit) = plan_steps(JobState::Submitted, &ns(NativeState::Exited(0), Some(1), Some(2), Some(3)), now);
        assert_eq!(
            steps,
            vec![
                (JobState::Queued, SimTime::from_secs(1)),
                (JobState::Running, SimTime::from_secs(2)),
                (JobState::Completed, SimTime::from_secs(3))
            ]
        );
        assert_eq!(exit, Some(0));
        let (steps, _) = plan_steps(JobState::Running, &ns(NativeState::Exited(2), Some(1), Some(2), Some(3)), now);
        assert_eq!(steps, vec![(JobState::Failed, SimTime::from_secs(3))]);
        let (steps, _) = plan_steps(JobState::Queued, &ns(NativeState::Canceled, Some(1), None, None), now);
        assert_eq!(steps, vec![(JobState::Canceled, now)]);
        let (steps, _) = plan_steps(JobState::Queued, &ns(NativeState::Held, Some(1), None, None), now);
        assert!(steps.is_empty());
    }
}
