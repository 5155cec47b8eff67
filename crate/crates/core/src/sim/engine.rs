//! The scenario runner: one manual clock, one event queue, and the real
//! middleware, pools, cache and proxy driven against simulated clusters.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Command, Step, World, DEFAULT_CREDENTIAL};
use super::events::EventQueue;
use super::lrm::{workload_behaviour, Flavor, SimLrm};
use super::metrics::ScenarioMetrics;
use super::queue::QueueModel;
use super::trace::Trace;
use super::transport::SimTransport;
use super::mix_seed;
use crate::dms::{resolve_local, DataManager, DatasetCatalog, DmsCache, SimRepository, StagingOutcome, TransferLog};
use crate::fields;
use crate::lrm::{
    CancelAck, JobId, JobInfo, JobSpec, JobState, LrmError, Middleware, PbsDialect, SlurmDialect, Transition,
};
use crate::pilot::{PilotPool, PoolError, TickReport};
use crate::planner::{ExecutionModel, Objective, PlacementPlan, Planner, WorkloadRequirements};
use crate::proxy::{public_path, EchoNetwork, Endpoint, ProxyRegistry};
use crate::tale::TaleId;
use crate::time::{Clock, ManualClock, SimDuration, SimTime};

const FRONTEND_PORT: u16 = 8888;

#[derive(Debug)]
enum Event {
    Step { index: usize, repeat: usize },
    Poll,
    Submit { spec: JobSpec, label: Option<String>, cancel_after: Option<SimDuration> },
    CancelJob(JobId),
    WorkloadStart { label: Option<String>, resource: String, requested: SimTime, pilot: JobId, runtime: SimDuration },
    ReleasePilot { pilot: JobId, label: Option<String> },
    FrontendReady { tale: TaleId, requested: SimTime, via: &'static str, endpoint: Endpoint, pilot: Option<JobId> },
    FrontendStop { tale: TaleId, pilot: Option<JobId> },
}

#[derive(Debug, Clone)]
enum Waiter {
    Workload { label: Option<String>, requested: SimTime },
    Frontend { tale: TaleId, requested: SimTime },
}

#[derive(Debug, Clone)]
struct FrontendState {
    plan: PlacementPlan,
    duration: SimDuration,
}

/// Everything a finished run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub trace: Trace,
    pub metrics: ScenarioMetrics,
    pub jobs: Vec<JobInfo>,
}

pub struct Engine {
    world: World,
    clock: Arc<ManualClock>,
    middleware: Arc<Middleware>,
    pools: BTreeMap<String, PilotPool>,
    data: DataManager,
    proxy: ProxyRegistry,
    queue: EventQueue<Event>,
    trace: Trace,
    labels: BTreeMap<String, Vec<JobId>>,
    waiters: BTreeMap<JobId, Waiter>,
    frontends: BTreeMap<TaleId, FrontendState>,
    transport_seen: usize,
    transfers_seen: usize,
    seed: u64,
    horizon: SimTime,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("now", &self.clock.now()).field("seed", &self.seed).finish_non_exhaustive()
    }
}

impl Engine {
    /// Builds the simulated clusters and services and schedules the
    /// scenario. Pools submit their first pilots at time zero.
    pub fn new(world: World, seed: u64) -> Result<Engine, LrmError> {
        let clock = Arc::new(ManualClock::new(SimTime::ZERO));
        let cfg = &world.config;
        let mut transport = SimTransport::new(cfg.network.clone(), mix_seed(seed, "network"));
        let mut registered = Vec::new();
        for r in cfg.resources.iter().filter(|r| r.is_hpc()) {
            let dialect = world.dialect_of(r);
            let flavor = Flavor::from_dialect(&dialect).unwrap_or(Flavor::Pbs);
            let queue = world.queues.get(&r.name).cloned().unwrap_or_else(|| QueueModel::fixed(0));
            transport.attach(&r.name, SimLrm::new(&r.name, flavor, queue, r.node_count, mix_seed(seed, &r.name)));
            let mut bound = r.clone();
            bound.dialect = Some(dialect);
            registered.push(bound);
        }
        let middleware = Middleware::new(clock.clone(), Arc::new(transport), cfg.middleware.middleware_config());
        middleware.register_dialect("sim-pbs", Arc::new(PbsDialect))?;
        middleware.register_dialect("pbs", Arc::new(PbsDialect))?;
        middleware.register_dialect("sim-slurm", Arc::new(SlurmDialect))?;
        middleware.register_dialect("slurm", Arc::new(SlurmDialect))?;
        for r in &registered {
            middleware.register_resource(r)?;
        }
        for c in &world.credentials {
            middleware.register_credential(c);
        }
        let middleware = Arc::new(middleware);

        let catalog = DatasetCatalog::from_refs(cfg.cache.datasets.iter().cloned())
            .map_err(|e| LrmError::InvalidSpec(e.to_string()))?;
        let cache = DmsCache::new(cfg.cache.cache_config(), catalog, Arc::new(SimRepository::new()), Arc::new(TransferLog::new()));
        let data = DataManager::new(cache, cfg.cache.local_bandwidth_bytes_per_s);
        let proxy = ProxyRegistry::new(
            clock.clone(),
            Arc::new(EchoNetwork::new()),
            cfg.resources.iter().filter(|r| r.no_proxy).map(|r| r.name.clone()),
        );

        let horizon = world.horizon();
        let mut engine = Engine {
            clock,
            middleware,
            pools: BTreeMap::new(),
            data,
            proxy,
            queue: EventQueue::new(),
            trace: Trace::default(),
            labels: BTreeMap::new(),
            waiters: BTreeMap::new(),
            frontends: BTreeMap::new(),
            transport_seen: 0,
            transfers_seen: 0,
            seed,
            horizon,
            world,
        };
        engine.trace.push(SimTime::ZERO, "run_started", fields! {"seed" => seed, "horizon_s" => horizon.as_secs_f64()});
        for policy in engine.world.config.pools.clone() {
            let pool = PilotPool::configure(policy.clone(), engine.middleware.clone()).map_err(|e| match e {
                PoolError::Middleware(m) => m,
                other => LrmError::InvalidSpec(other.to_string()),
            })?;
            let report = TickReport { submitted: pool.slots().into_iter().map(|s| s.pilot_job).collect(), ..Default::default() };
            engine.pools.insert(policy.resource.clone(), pool);
            engine.record_pool(&policy.resource, &report);
        }
        for (index, step) in engine.world.config.scenario.iter().enumerate() {
            let (count, every) = match step {
                Step::Submit { count, every, .. } | Step::Workload { count, every, .. } => (*count, *every),
                _ => (1, SimDuration::ZERO),
            };
            for repeat in 0..count {
                let at = step.at() + SimDuration::from_micros(every.as_micros() * repeat as u64);
                engine.queue.push(at, Event::Step { index, repeat });
            }
        }
        let interval = engine.world.config.middleware.poll_interval;
        engine.queue.push(SimTime::ZERO + interval, Event::Poll);
        engine.flush();
        Ok(engine)
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    pub fn horizon(&self) -> SimTime {
        self.horizon
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn middleware(&self) -> &Arc<Middleware> {
        &self.middleware
    }

    pub fn pool(&self, resource: &str) -> Option<&PilotPool> {
        self.pools.get(resource)
    }

    pub fn data(&self) -> &DataManager {
        &self.data
    }

    pub fn proxy(&self) -> &ProxyRegistry {
        &self.proxy
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn jobs_labelled(&self, label: &str) -> &[JobId] {
        self.labels.get(label).map_or(&[], Vec::as_slice)
    }

    /// Whether only the periodic poll is left and no job is active.
    fn quiescent(&self) -> bool {
        self.queue.len() == 1 && self.middleware.active_pollers() == 0 && self.waiters.is_empty()
    }

    /// Processes events up to and including `until` and moves the clock
    /// there. Stops early once nothing more can happen.
    pub fn run_until(&mut self, until: SimTime) {
        while let Some(t) = self.queue.peek_time() {
            if t > until || self.quiescent() {
                break;
            }
            let (t, event) = self.queue.pop().expect("peeked");
            self.clock.advance_to(t);
            self.handle(event);
            self.flush();
        }
        if !self.quiescent() {
            self.clock.advance_to(until);
        }
    }

    /// Like [`Engine::run_until`] but always ends with the clock at `to`,
    /// for interactive sessions that submit work after a quiet spell. The
    /// periodic poll moves to the first interval boundary after `to`.
    pub fn advance_to(&mut self, to: SimTime) {
        self.run_until(to);
        if self.clock.now() >= to {
            return;
        }
        self.queue.pop();
        self.clock.advance_to(to);
        let step = self.world.config.middleware.poll_interval.as_micros().max(1);
        let next = SimTime::from_micros((to.as_micros() / step + 1) * step);
        if next <= self.horizon {
            self.queue.push(next, Event::Poll);
        }
    }

    /// Runs until `stop` holds after an event, or `until` passes.
    pub fn run_while(&mut self, until: SimTime, mut stop: impl FnMut(&Engine) -> bool) {
        while let Some(t) = self.queue.peek_time() {
            if t > until || self.quiescent() || stop(self) {
                break;
            }
            let (t, event) = self.queue.pop().expect("peeked");
            self.clock.advance_to(t);
            self.handle(event);
            self.flush();
        }
    }

    /// Submits a job outside the scripted scenario, at the current time.
    pub fn submit(&mut self, spec: JobSpec, label: Option<String>) -> Result<JobId, LrmError> {
        let id = self.submit_now(spec, label)?;
        self.flush();
        Ok(id)
    }

    pub fn cancel(&mut self, id: JobId) -> Result<CancelAck, LrmError> {
        let ack = self.middleware.cancel(id);
        self.flush();
        ack
    }

    pub fn finish(mut self) -> RunOutput {
        self.run_until(self.horizon);
        self.close()
    }

    /// Ends the run at the current time without processing further events.
    pub fn close(mut self) -> RunOutput {
        let c = self.middleware.counters();
        let now = self.clock.now();
        self.trace.push(
            now,
            "run_finished",
            fields! {
                "submits" => c.submits,
                "backend_queries" => c.backend_queries,
                "poll_cycles" => c.poll_cycles,
                "handshakes" => c.handshakes,
                "illegal_transitions" => c.illegal_transitions,
                "transfers" => self.data.transfer_log().len(),
            },
        );
        let jobs = self.middleware.job_ids().into_iter().filter_map(|id| self.middleware.job(id).ok()).collect();
        let metrics = ScenarioMetrics::from_trace(&self.trace);
        RunOutput { trace: self.trace, metrics, jobs }
    }

    fn error(&mut self, context: &str, message: impl ToString) {
        let now = self.clock.now();
        self.trace.push(now, "error", fields! {"context" => context, "message" => message.to_string()});
    }

    fn submit_now(&mut self, spec: JobSpec, label: Option<String>) -> Result<JobId, LrmError> {
        let resource = spec.resource.clone();
        let handle = self.middleware.submit(spec)?;
        let now = self.clock.now();
        self.trace.push(
            now,
            "job_submitted",
            fields! {
                "job" => handle.job_id.to_string(),
                "resource" => resource,
                "label" => label.clone(),
                "return_latency_s" => handle.return_latency.as_secs_f64(),
            },
        );
        if let Some(l) = label {
            self.labels.entry(l).or_default().push(handle.job_id);
        }
        Ok(handle.job_id)
    }

    fn handle(&mut self, event: Event) {
        let now = self.clock.now();
        match event {
            Event::Step { index, repeat } => {
                let step = self.world.config.scenario[index].clone();
                self.trace.push(now, "step", fields! {"index" => index, "repeat" => repeat, "action" => step.action()});
                self.run_step(index, repeat, step);
            }
            Event::Poll => {
                self.middleware.poll_all();
                self.flush();
                let resources: Vec<String> = self.pools.keys().cloned().collect();
                for r in resources {
                    let report = self.pools[&r].tick();
                    self.record_pool(&r, &report);
                }
                let next = now + self.world.config.middleware.poll_interval;
                if next <= self.horizon {
                    self.queue.push(next, Event::Poll);
                }
            }
            Event::Submit { spec, label, cancel_after } => match self.submit_now(spec, label) {
                Ok(id) => {
                    if let Some(d) = cancel_after {
                        self.queue.push(now + d, Event::CancelJob(id));
                    }
                }
                Err(e) => self.error("submit", e),
            },
            Event::CancelJob(id) => {
                if let Err(e) = self.middleware.cancel(id) {
                    self.error("cancel", e);
                }
            }
            Event::WorkloadStart { label, resource, requested, pilot, runtime } => {
                self.trace.push(
                    now,
                    "workload_started",
                    fields! {
                        "label" => label.clone(),
                        "resource" => resource,
                        "via" => "pilot",
                        "pilot" => pilot.to_string(),
                        "latency_s" => now.since(requested).as_secs_f64(),
                    },
                );
                self.queue.push(now + runtime, Event::ReleasePilot { pilot, label });
            }
            Event::ReleasePilot { pilot, label } => {
                let resource = self.middleware.job(pilot).map(|j| j.spec.resource).unwrap_or_default();
                self.trace.push(now, "workload_finished", fields! {"label" => label, "pilot" => pilot.to_string()});
                if let Some(pool) = self.pools.get(&resource) {
                    // a pilot that hit its walltime is already retired
                    if let Err(e) = pool.release(pilot).or_else(ignore_retired) {
                        self.error("release", e);
                    }
                }
            }
            Event::FrontendReady { tale, requested, via, endpoint, pilot } => self.frontend_ready(tale, requested, via, endpoint, pilot),
            Event::FrontendStop { tale, pilot } => {
                self.proxy.deregister(&tale);
                self.trace.push(now, "frontend_stopped", fields! {"tale" => tale.as_str()});
                if let Some(p) = pilot {
                    let resource = self.middleware.job(p).map(|j| j.spec.resource).unwrap_or_default();
                    if let Some(pool) = self.pools.get(&resource) {
                        if let Err(e) = pool.release(p).or_else(ignore_retired) {
                            self.error("release", e);
                        }
                    }
                }
            }
        }
    }

    fn credential(&self, c: &Option<String>) -> String {
        c.clone().unwrap_or_else(|| DEFAULT_CREDENTIAL.to_string())
    }

    fn run_step(&mut self, index: usize, repeat: usize, step: Step) {
        let now = self.clock.now();
        match step {
            Step::Submit { resource, command, credential, nodes, mpi, tale, label, .. } => {
                let mut spec = match self.spec(&resource, &command, &credential) {
                    Ok(s) => s,
                    Err(e) => return self.error("submit", e),
                };
                spec.node_count = nodes;
                spec.mpi = mpi;
                spec.tale_id = tale.and_then(|t| TaleId::new(t).ok());
                if let Err(e) = self.submit_now(spec, label) {
                    self.error("submit", e);
                }
            }
            Step::Cancel { label, .. } => {
                let ids = self.labels.get(&label).cloned().unwrap_or_default();
                if ids.is_empty() {
                    self.error("cancel", format!("no jobs labelled {label}"));
                }
                for id in ids {
                    if let Err(e) = self.middleware.cancel(id) {
                        self.error("cancel", e);
                    }
                }
            }
            Step::Workload { resource, command, credential, nodes, use_pool, label, .. } => {
                let mut spec = match self.spec(&resource, &command, &credential) {
                    Ok(s) => s,
                    Err(e) => return self.error("workload", e),
                };
                spec.node_count = nodes;
                let label = label.map(|l| if repeat > 0 { format!("{l}#{repeat}") } else { l });
                self.trace.push(now, "workload_requested", fields! {"label" => label.clone(), "resource" => resource.clone()});
                let claim = match self.pools.get(&resource).filter(|_| use_pool) {
                    Some(pool) => pool.claim(&spec, label.as_deref().unwrap_or("workload")),
                    None => Ok(None),
                };
                match claim {
                    Ok(Some(c)) => {
                        let pilot = c.slot.pilot_job.job_id;
                        self.trace.push(now, "pilot_claimed", fields! {"resource" => resource.clone(), "pilot" => pilot.to_string()});
                        let runtime = workload_behaviour(&spec.command, SimDuration::from_secs(60)).0;
                        self.queue.push(c.start_at, Event::WorkloadStart { label, resource, requested: now, pilot, runtime });
                    }
                    Ok(None) => match self.submit_now(spec, label.clone()) {
                        Ok(id) => {
                            self.waiters.insert(id, Waiter::Workload { label, requested: now });
                        }
                        Err(e) => self.error("workload", e),
                    },
                    Err(e) => self.error("workload", e),
                }
            }
            Step::LaunchFrontend { tale, requirements, objective, model, duration, use_pool, .. } => {
                self.launch_frontend(&tale, &requirements, objective, model, duration, use_pool);
            }
            Step::Open { uris, resource, tale, .. } => {
                let descriptor = resource.as_ref().and_then(|r| self.world.resource(r)).cloned();
                for uri in uris {
                    let outcome = match (&descriptor, self.data.cache().lookup(&uri)) {
                        (Some(r), Some(d)) => self.data.stage(&resolve_local(&d, r), now),
                        _ => self.data.cache().open(&uri, now).map(StagingOutcome::Cached),
                    };
                    match outcome {
                        Ok(o) => {
                            let (action, ready_at) = match &o {
                                StagingOutcome::Mounted { .. } => ("mount", now),
                                StagingOutcome::StagedIn { ready_at, .. } => ("stage_in", *ready_at),
                                StagingOutcome::Cached(h) => ("cache_fetch", h.ready_at),
                            };
                            self.trace.push(
                                now,
                                "staging",
                                fields! {
                                    "uri" => uri,
                                    "action" => action,
                                    "resource" => resource.clone(),
                                    "tale" => tale.clone(),
                                    "ready_at" => ready_at.as_secs_f64(),
                                },
                            );
                        }
                        Err(e) => self.error("open", e),
                    }
                }
            }
            Step::Prefetch { uris, .. } => {
                for uri in uris {
                    if let Err(e) = self.data.cache().open(&uri, now) {
                        self.error("prefetch", e);
                    }
                }
            }
            Step::Evict { bytes, .. } => match self.data.cache().evict(bytes) {
                Ok(evicted) => self.trace.push(now, "evicted", fields! {"uris" => evicted}),
                Err(e) => self.error("evict", e),
            },
            Step::Route { tale, path, body, .. } => {
                let Ok(id) = TaleId::new(&tale) else { return self.error("route", format!("bad tale id {tale:?}")) };
                let full = format!("{}{}", public_path(&id), path.trim_start_matches('/'));
                match self.proxy.route(&full, body.as_bytes()) {
                    Ok(reply) => self.trace.push(
                        now,
                        "route",
                        fields! {"tale" => tale, "path" => full, "ok" => true, "echo" => reply == body.as_bytes()},
                    ),
                    Err(e) => self.trace.push(now, "route", fields! {"tale" => tale, "path" => full, "ok" => false, "error" => e.to_string()}),
                }
            }
            Step::FuzzJobs { at, until, count, resources, max_runtime, fail_fraction, cancel_fraction } => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, &format!("fuzz:{index}")));
                let span = until.since(at).as_micros();
                let max = max_runtime.as_micros().max(1);
                for _ in 0..count {
                    let t = at + SimDuration::from_micros(if span == 0 { 0 } else { rng.random_range(0..=span) });
                    let resource = resources[rng.random_range(0..resources.len())].clone();
                    let runtime = SimDuration::from_micros(rng.random_range(1..=max)).to_decimal();
                    let command: Vec<&str> =
                        if rng.random_bool(fail_fraction) { vec!["fail", &runtime, "2"] } else { vec!["sleep", &runtime] };
                    let spec = JobSpec::new(resource, DEFAULT_CREDENTIAL, &command);
                    let cancel_after =
                        rng.random_bool(cancel_fraction).then(|| SimDuration::from_micros(rng.random_range(0..=2 * max)));
                    self.queue.push(t, Event::Submit { spec, label: Some("fuzz".into()), cancel_after });
                }
            }
        }
    }

    fn spec(&self, resource: &str, command: &Command, credential: &Option<String>) -> Result<JobSpec, String> {
        let argv = command.argv()?;
        let refs: Vec<&str> = argv.iter().map(String::as_str).collect();
        Ok(JobSpec::new(resource, self.credential(credential), &refs))
    }

    fn planner(&self) -> Planner {
        let mut config = self.world.planner_config();
        config.warm_pilots = self.pools.iter().map(|(r, p)| (r.clone(), p.counts().warm)).collect();
        Planner::new(config)
    }

    fn launch_frontend(
        &mut self,
        tale: &str,
        req: &WorkloadRequirements,
        objective: Objective,
        model: Option<ExecutionModel>,
        duration: SimDuration,
        use_pool: bool,
    ) {
        let now = self.clock.now();
        let Ok(tale_id) = TaleId::new(tale) else { return self.error("launch_frontend", format!("bad tale id {tale:?}")) };
        let planner = self.planner();
        let inventory = &self.world.config.resources;
        let planned = match model {
            Some(m) => planner.plan_model(req, inventory, objective, m),
            None => planner.plan_placement(req, inventory, objective),
        };
        let plan = match planned {
            Ok(p) => p,
            Err(e) => {
                self.trace.push(now, "frontend_failed", fields! {"tale" => tale, "reason" => e.to_string()});
                return;
            }
        };
        self.trace.push(
            now,
            "frontend_requested",
            fields! {
                "tale" => tale,
                "model" => plan.model.code(),
                "resource" => plan.frontend_resource.clone(),
                "workload_resources" => plan.workload_resources.clone(),
                "proxy_required" => plan.proxy_required,
                "estimated_ttf_s" => plan.estimated_time_to_frontend.as_secs_f64(),
                "data_movement_bytes" => plan.data_movement_bytes,
            },
        );
        for action in &plan.staging_actions {
            if let Err(e) = self.data.stage(action, now) {
                self.error("staging", e);
            }
        }
        let resource = plan.frontend_resource.clone();
        let image_load = self.world.config.frontend.image_load;
        let credential = plan.credential.clone();
        let mpi_nodes = if plan.model == ExecutionModel::M4HpcMpi { req.min_nodes.max(1) } else { 1 };
        self.frontends.insert(tale_id.clone(), FrontendState { plan: plan.clone(), duration });

        if !plan.model.frontend_on_hpc() {
            let endpoint = Endpoint::new(&resource, format!("{resource}-frontend"), FRONTEND_PORT);
            self.queue.push(now + image_load, Event::FrontendReady { tale: tale_id, requested: now, via: "direct", endpoint, pilot: None });
            return;
        }

        let total = (duration + image_load).to_decimal();
        let mut spec = JobSpec::new(&resource, credential, &["frontend", &total]);
        spec.tale_id = Some(tale_id.clone());
        spec.node_count = mpi_nodes;
        spec.mpi = plan.model == ExecutionModel::M4HpcMpi;
        let claim = match self.pools.get(&resource).filter(|_| use_pool && !spec.mpi) {
            Some(pool) => pool.claim(&spec, tale).unwrap_or(None),
            None => None,
        };
        if let Some(c) = claim {
            let pilot = c.slot.pilot_job.job_id;
            self.trace.push(now, "pilot_claimed", fields! {"resource" => resource.clone(), "pilot" => pilot.to_string()});
            let endpoint = Endpoint::new(&resource, format!("node-{pilot}"), FRONTEND_PORT);
            self.queue.push(
                c.start_at + image_load,
                Event::FrontendReady { tale: tale_id, requested: now, via: "pilot", endpoint, pilot: Some(pilot) },
            );
            return;
        }
        match self.submit_now(spec, Some(format!("frontend:{tale}"))) {
            Ok(id) => {
                self.waiters.insert(id, Waiter::Frontend { tale: tale_id, requested: now });
            }
            Err(e) => {
                self.trace.push(now, "frontend_failed", fields! {"tale" => tale, "reason" => e.to_string()});
            }
        }
    }

    fn frontend_ready(&mut self, tale: TaleId, requested: SimTime, via: &'static str, endpoint: Endpoint, pilot: Option<JobId>) {
        let now = self.clock.now();
        let Some(state) = self.frontends.get(&tale).cloned() else { return };
        let route = match self.proxy.register_endpoint(&tale, endpoint.clone()) {
            Ok(r) => Some(r.public_path),
            Err(e) => {
                self.error("proxy", e);
                None
            }
        };
        self.trace.push(
            now,
            "frontend_ready",
            fields! {
                "tale" => tale.as_str(),
                "model" => state.plan.model.code(),
                "resource" => endpoint.resource,
                "via" => via,
                "ttf_s" => now.since(requested).as_secs_f64(),
                "route" => route,
                "proxied" => state.plan.proxy_required,
            },
        );
        self.queue.push(now + state.duration, Event::FrontendStop { tale, pilot });
    }

    /// Moves new transitions, transport calls and transfers into the trace
    /// and wakes whoever waits on a job.
    fn flush(&mut self) {
        let now = self.clock.now();
        let transitions = self.middleware.drain_transitions();
        for t in transitions {
            self.record_transition(&t, now);
        }
        let calls = self.middleware.transport_log().since(self.transport_seen);
        self.transport_seen += calls.len();
        for c in calls {
            self.trace.push(
                c.time,
                "transport_call",
                fields! {"resource" => c.resource, "credential" => c.credential, "verb" => c.verb.name(), "ok" => c.ok},
            );
        }
        let transfers = self.data.transfer_log().since(self.transfers_seen);
        self.transfers_seen += transfers.len();
        for r in transfers {
            self.trace.push(
                now,
                "transfer",
                fields! {
                    "uri" => r.uri,
                    "source" => r.source,
                    "bytes" => r.bytes,
                    "resource" => r.resource,
                    "started" => r.started.as_secs_f64(),
                    "finished" => r.finished.as_secs_f64(),
                },
            );
        }
    }

    fn record_transition(&mut self, t: &Transition, now: SimTime) {
        let resource = self.middleware.job(t.job_id).map(|j| j.spec.resource).unwrap_or_default();
        self.trace.push(
            now,
            "job_transition",
            fields! {
                "job" => t.job_id.to_string(),
                "resource" => resource.clone(),
                "from" => t.from.name(),
                "to" => t.to.name(),
                "at" => t.at.as_secs_f64(),
            },
        );
        let Some(waiter) = self.waiters.get(&t.job_id).cloned() else { return };
        match (t.to, waiter) {
            (JobState::Running, Waiter::Workload { label, requested }) => {
                self.waiters.remove(&t.job_id);
                self.trace.push(
                    now,
                    "workload_started",
                    fields! {
                        "label" => label,
                        "resource" => resource,
                        "via" => "queue",
                        "job" => t.job_id.to_string(),
                        "latency_s" => t.at.since(requested).as_secs_f64(),
                    },
                );
            }
            (JobState::Running, Waiter::Frontend { tale, requested }) => {
                self.waiters.remove(&t.job_id);
                let image_load = self.world.config.frontend.image_load;
                let endpoint = Endpoint::new(&resource, format!("node-{}", t.job_id), FRONTEND_PORT);
                // the backend start time, not the poll that noticed it
                let ready = t.at + image_load;
                self.queue.push(ready, Event::FrontendReady { tale, requested, via: "queue", endpoint, pilot: None });
            }
            (s, Waiter::Workload { label, .. }) if s.is_terminal() => {
                self.waiters.remove(&t.job_id);
                self.trace.push(now, "workload_failed", fields! {"label" => label, "job" => t.job_id.to_string(), "state" => s.name()});
            }
            (s, Waiter::Frontend { tale, .. }) if s.is_terminal() => {
                self.waiters.remove(&t.job_id);
                self.trace.push(
                    now,
                    "frontend_failed",
                    fields! {"tale" => tale.as_str(), "job" => t.job_id.to_string(), "reason" => s.name()},
                );
            }
            _ => {}
        }
    }

    fn record_pool(&mut self, resource: &str, report: &TickReport) {
        let now = self.clock.now();
        for h in &report.submitted {
            self.trace.push(now, "pilot_submitted", fields! {"resource" => resource, "pilot" => h.job_id.to_string()});
        }
        for id in &report.warmed {
            self.trace.push(now, "pilot_warm", fields! {"resource" => resource, "pilot" => id.to_string()});
        }
        for id in &report.expired {
            self.trace.push(now, "pilot_expired", fields! {"resource" => resource, "pilot" => id.to_string()});
        }
        self.flush();
    }
}

fn ignore_retired(e: PoolError) -> Result<(), PoolError> {
    match e {
        PoolError::NotClaimed(_) => Ok(()),
        other => Err(other),
    }
}

/// Builds an engine for `world`, runs it to its horizon and returns the
/// result.
pub fn run_scenario(world: World, seed: u64) -> Result<RunOutput, LrmError> {
    Ok(Engine::new(world, seed)?.finish())
}
