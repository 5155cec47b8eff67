//! Simulation config files: JSON with `resources`, `queues`, `pools`,
//! `cache` and `scenario` sections, plus optional `network`, `middleware`
//! and `frontend` tuning.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::queue::QueueModel;
use super::transport::NetworkModel;
use crate::dms::{CacheConfig, DatasetCatalog, ExternalDataRef};
use crate::lrm::{MiddlewareConfig, SessionConfig};
use crate::pilot::PoolPolicy;
use crate::planner::{
    ExecutionModel, Objective, PlannerConfig, QueueModelRef, ResourceDescriptor, ResourceKind, WorkloadRequirements,
};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {cause}")]
    Io { path: String, cause: String },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{referrer} references unknown resource {resource}")]
    UnknownResource { referrer: String, resource: String },
}

/// A command given either as one shell-style string or as an argv list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Command {
    Line(String),
    Argv(Vec<String>),
}

impl Command {
    pub fn argv(&self) -> Result<Vec<String>, String> {
        match self {
            Command::Line(s) => shell_words::split(s).map_err(|e| format!("command {s:?}: {e}")),
            Command::Argv(v) => Ok(v.clone()),
        }
    }
}

fn one() -> u32 {
    1
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn day() -> SimDuration {
    SimDuration::from_secs(86_400)
}
fn ten_minutes() -> SimDuration {
    SimDuration::from_secs(600)
}
fn tenth() -> f64 {
    0.1
}

/// One scripted action. Repeated actions run `count` times, `every` apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    Submit {
        at: SimTime,
        resource: String,
        command: Command,
        #[serde(default)]
        credential: Option<String>,
        #[serde(default = "one")]
        nodes: u32,
        #[serde(default)]
        mpi: bool,
        #[serde(default)]
        tale: Option<String>,
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "one_usize")]
        count: usize,
        #[serde(default)]
        every: SimDuration,
    },
    Cancel {
        at: SimTime,
        label: String,
    },
    LaunchFrontend {
        at: SimTime,
        tale: String,
        #[serde(default)]
        requirements: WorkloadRequirements,
        #[serde(default)]
        objective: Objective,
        /// Force a model instead of planning; it must be feasible.
        #[serde(default)]
        model: Option<ExecutionModel>,
        /// How long the frontend stays up once started.
        #[serde(default = "day")]
        duration: SimDuration,
        #[serde(default = "yes")]
        use_pool: bool,
    },
    Workload {
        at: SimTime,
        resource: String,
        command: Command,
        #[serde(default)]
        credential: Option<String>,
        #[serde(default = "one")]
        nodes: u32,
        #[serde(default = "yes")]
        use_pool: bool,
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "one_usize")]
        count: usize,
        #[serde(default)]
        every: SimDuration,
    },
    Open {
        at: SimTime,
        uris: Vec<String>,
        /// Resource of the consumer; without one, reads go through the cache.
        #[serde(default)]
        resource: Option<String>,
        #[serde(default)]
        tale: Option<String>,
    },
    Prefetch {
        at: SimTime,
        uris: Vec<String>,
    },
    Evict {
        at: SimTime,
        bytes: u64,
    },
    Route {
        at: SimTime,
        tale: String,
        #[serde(default)]
        path: String,
        body: String,
    },
    /// Randomised job mix for lifecycle checks.
    FuzzJobs {
        at: SimTime,
        until: SimTime,
        count: usize,
        resources: Vec<String>,
        #[serde(default = "ten_minutes")]
        max_runtime: SimDuration,
        #[serde(default = "tenth")]
        fail_fraction: f64,
        #[serde(default = "tenth")]
        cancel_fraction: f64,
    },
}

impl Step {
    pub fn at(&self) -> SimTime {
        match self {
            Step::Submit { at, .. }
            | Step::Cancel { at, .. }
            | Step::LaunchFrontend { at, .. }
            | Step::Workload { at, .. }
            | Step::Open { at, .. }
            | Step::Prefetch { at, .. }
            | Step::Evict { at, .. }
            | Step::Route { at, .. }
            | Step::FuzzJobs { at, .. } => *at,
        }
    }

    pub fn action(&self) -> &'static str {
        match self {
            Step::Submit { .. } => "submit",
            Step::Cancel { .. } => "cancel",
            Step::LaunchFrontend { .. } => "launch_frontend",
            Step::Workload { .. } => "workload",
            Step::Open { .. } => "open",
            Step::Prefetch { .. } => "prefetch",
            Step::Evict { .. } => "evict",
            Step::Route { .. } => "route",
            Step::FuzzJobs { .. } => "fuzz_jobs",
        }
    }

    fn resources(&self) -> Vec<&str> {
        match self {
            Step::Submit { resource, .. } | Step::Workload { resource, .. } => vec![resource],
            Step::Open { resource: Some(r), .. } => vec![r],
            Step::FuzzJobs { resources, .. } => resources.iter().map(String::as_str).collect(),
            _ => Vec::new(),
        }
    }

    fn credential(&self) -> Option<&str> {
        match self {
            Step::Submit { credential, .. } | Step::Workload { credential, .. } => credential.as_deref(),
            Step::LaunchFrontend { requirements, .. } => requirements.credential.as_deref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSection {
    pub capacity_bytes: u64,
    pub bandwidth_bytes_per_s: f64,
    /// Speed of copies from non-POSIX storage on a resource.
    pub local_bandwidth_bytes_per_s: f64,
    pub datasets: Vec<ExternalDataRef>,
}

impl Default for CacheSection {
    fn default() -> Self {
        let c = CacheConfig::default();
        CacheSection {
            capacity_bytes: c.capacity_bytes,
            bandwidth_bytes_per_s: c.bandwidth_bytes_per_s,
            local_bandwidth_bytes_per_s: 1e9,
            datasets: Vec::new(),
        }
    }
}

impl CacheSection {
    pub fn cache_config(&self) -> CacheConfig {
        CacheConfig { capacity_bytes: self.capacity_bytes, bandwidth_bytes_per_s: self.bandwidth_bytes_per_s, ..CacheConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiddlewareSection {
    pub poll_interval: SimDuration,
    /// `null` keeps sessions open for the whole run.
    pub idle_ttl: Option<SimDuration>,
    pub backoff: SimDuration,
    pub count_empty_cycles: bool,
}

impl Default for MiddlewareSection {
    fn default() -> Self {
        let m = MiddlewareConfig::default();
        MiddlewareSection {
            poll_interval: m.poll_interval,
            idle_ttl: m.sessions.idle_ttl,
            backoff: m.sessions.backoff,
            count_empty_cycles: m.count_empty_cycles,
        }
    }
}

impl MiddlewareSection {
    pub fn middleware_config(&self) -> MiddlewareConfig {
        MiddlewareConfig {
            sessions: SessionConfig { idle_ttl: self.idle_ttl, backoff: self.backoff },
            poll_interval: self.poll_interval,
            count_empty_cycles: self.count_empty_cycles,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendSection {
    /// Time for a container host to load the Tale image.
    pub image_load: SimDuration,
    /// Planner's estimate of the dispatch into a warm pilot.
    pub dispatch_overhead: SimDuration,
}

impl Default for FrontendSection {
    fn default() -> Self {
        FrontendSection { image_load: SimDuration::from_secs(8), dispatch_overhead: SimDuration::from_millis(500) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub resources: Vec<ResourceDescriptor>,
    #[serde(default)]
    pub queues: BTreeMap<String, QueueModel>,
    #[serde(default)]
    pub pools: Vec<PoolPolicy>,
    #[serde(default)]
    pub cache: CacheSection,
    #[serde(default)]
    pub scenario: Vec<Step>,
    #[serde(default)]
    pub network: NetworkModel,
    #[serde(default)]
    pub middleware: MiddlewareSection,
    #[serde(default)]
    pub frontend: FrontendSection,
    /// Credentials known to the middleware in addition to those the
    /// scenario and pools use.
    #[serde(default)]
    pub credentials: Vec<String>,
    /// End of the run. Defaults to one day after the last scripted step.
    #[serde(default)]
    pub horizon: Option<SimTime>,
}

pub const DEFAULT_CREDENTIAL: &str = "default";

/// A validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: SimConfig,
    /// Queue model of every HPC resource, resolved.
    pub queues: BTreeMap<String, QueueModel>,
    pub credentials: BTreeSet<String>,
}

impl World {
    pub fn horizon(&self) -> SimTime {
        self.config.horizon.unwrap_or_else(|| {
            let last = self
                .config
                .scenario
                .iter()
                .map(|s| match s {
                    Step::Submit { at, count, every, .. } | Step::Workload { at, count, every, .. } => {
                        *at + SimDuration::from_micros(every.as_micros() * count.saturating_sub(1) as u64)
                    }
                    Step::FuzzJobs { until, .. } => *until,
                    other => other.at(),
                })
                .max()
                .unwrap_or(SimTime::ZERO);
            last + SimDuration::from_secs(86_400)
        })
    }

    pub fn resource(&self, name: &str) -> Option<&ResourceDescriptor> {
        self.config.resources.iter().find(|r| r.name == name)
    }

    /// Planner inputs implied by this world, with no warm pilots.
    pub fn planner_config(&self) -> PlannerConfig {
        PlannerConfig {
            image_load: self.config.frontend.image_load,
            dispatch_overhead: self.config.frontend.dispatch_overhead,
            queues: self.config.queues.clone(),
            warm_pilots: BTreeMap::new(),
            // validation already rejected duplicate datasets
            catalog: DatasetCatalog::from_refs(self.config.cache.datasets.iter().cloned()).unwrap_or_default(),
            default_credential: DEFAULT_CREDENTIAL.into(),
        }
    }

    /// Dialect used for an HPC resource; PBS-style unless declared.
    pub fn dialect_of(&self, r: &ResourceDescriptor) -> String {
        r.dialect.clone().unwrap_or_else(|| "sim-pbs".to_string())
    }
}

pub fn load_config(path: &Path) -> Result<World, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), cause: e.to_string() })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<World, ConfigError> {
    let config: SimConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    validate(config)
}

pub fn validate(config: SimConfig) -> Result<World, ConfigError> {
    let invalid = |m: String| Err(ConfigError::Invalid(m));
    if config.resources.is_empty() {
        return invalid("no resources".into());
    }
    let mut names = BTreeSet::new();
    for r in &config.resources {
        r.validate().map_err(ConfigError::Invalid)?;
        if !names.insert(r.name.as_str()) {
            return invalid(format!("resource {} is defined twice", r.name));
        }
    }
    for (name, q) in &config.queues {
        q.validate().map_err(|e| ConfigError::Invalid(format!("queue {name}: {e}")))?;
    }

    let mut queues = BTreeMap::new();
    for r in config.resources.iter().filter(|r| r.kind == ResourceKind::HpcCluster) {
        let q = match &r.queue_model {
            None => QueueModel::fixed(0),
            Some(QueueModelRef::Inline(q)) => {
                q.validate().map_err(|e| ConfigError::Invalid(format!("queue of {}: {e}", r.name)))?;
                q.clone()
            }
            Some(QueueModelRef::Named(n)) => config
                .queues
                .get(n)
                .cloned()
                .ok_or_else(|| ConfigError::Invalid(format!("resource {} uses undefined queue {n}", r.name)))?,
        };
        if let Some(d) = &r.dialect {
            if super::lrm::Flavor::from_dialect(d).is_none() {
                return invalid(format!("resource {} uses unknown dialect {d}", r.name));
            }
        }
        queues.insert(r.name.clone(), q);
    }

    let mut credentials: BTreeSet<String> = config.credentials.iter().cloned().collect();
    credentials.insert(DEFAULT_CREDENTIAL.to_string());
    let mut pooled = BTreeSet::new();
    for (i, p) in config.pools.iter().enumerate() {
        let referrer = format!("pools[{i}]");
        let r = config.resources.iter().find(|r| r.name == p.resource).ok_or_else(|| ConfigError::UnknownResource {
            referrer: referrer.clone(),
            resource: p.resource.clone(),
        })?;
        if !r.is_hpc() {
            return invalid(format!("{referrer}: {} is not an HPC resource", p.resource));
        }
        if !pooled.insert(p.resource.as_str()) {
            return invalid(format!("{referrer}: {} already has a pool", p.resource));
        }
        p.validate().map_err(|e| ConfigError::Invalid(format!("{referrer}: {e}")))?;
        credentials.insert(p.credential.clone());
    }

    let mut uris = BTreeSet::new();
    for d in &config.cache.datasets {
        d.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !uris.insert(d.uri.as_str()) {
            return invalid(format!("dataset {} is listed twice", d.uri));
        }
    }

    for (i, step) in config.scenario.iter().enumerate() {
        let referrer = format!("scenario[{i}] ({})", step.action());
        for r in step.resources() {
            let Some(res) = config.resources.iter().find(|x| x.name == r) else {
                return Err(ConfigError::UnknownResource { referrer, resource: r.to_string() });
            };
            if !res.is_hpc() && !matches!(step, Step::Open { .. }) {
                return invalid(format!("{referrer}: {r} runs no batch jobs"));
            }
        }
        if let Some(c) = step.credential() {
            credentials.insert(c.to_string());
        }
        match step {
            Step::Submit { command, .. } | Step::Workload { command, .. } => {
                let argv = command.argv().map_err(|e| ConfigError::Invalid(format!("{referrer}: {e}")))?;
                if argv.is_empty() {
                    return invalid(format!("{referrer}: empty command"));
                }
            }
            Step::LaunchFrontend { requirements, .. } => {
                requirements.validate().map_err(|e| ConfigError::Invalid(format!("{referrer}: {e}")))?;
            }
            Step::FuzzJobs { until, at, fail_fraction, cancel_fraction, resources, .. } => {
                if until < at || resources.is_empty() {
                    return invalid(format!("{referrer}: needs resources and until >= at"));
                }
                if !(0.0..=1.0).contains(fail_fraction) || !(0.0..=1.0).contains(cancel_fraction) {
                    return invalid(format!("{referrer}: fractions must lie in [0, 1]"));
                }
            }
            _ => {}
        }
    }
    if config.middleware.poll_interval.is_zero() {
        return invalid("poll_interval must be positive".into());
    }
    Ok(World { config, queues, credentials })
}
