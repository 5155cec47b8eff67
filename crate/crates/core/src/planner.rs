//! Resource inventory, execution-model feasibility, and placement.
//!
//! A Tale frontend and its HPC workload can be arranged across resources in
//! six ways. The planner decides which arrangements an inventory supports and
//! picks one by a scalar objective, breaking ties by model order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dms::{resolve_local, DatasetCatalog, StagingAction, StagingKind};
use crate::sim::queue::QueueModel;
use crate::time::SimDuration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    WtCluster,
    HpcCluster,
    Cloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrmKind {
    None,
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetAccess {
    Posix,
    NonPosix,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LocalDataset {
    pub uri: String,
    pub access: DatasetAccess,
}

/// Queue parameters of a resource: either the name of an entry in the
/// queue table or an inline model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueueModelRef {
    Named(String),
    Inline(QueueModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawResource")]
pub struct ResourceDescriptor {
    pub name: String,
    pub kind: ResourceKind,
    pub lrm: LrmKind,
    /// Batch dialect adapter name, for resources with an LRM.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dialect: Option<String>,
    pub allows_incoming_connections: bool,
    /// Local policy forbids even proxied access to compute nodes.
    pub no_proxy: bool,
    pub mpi_capable: bool,
    pub can_compile: bool,
    pub node_count: u32,
    pub local_datasets: Vec<LocalDataset>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queue_model: Option<QueueModelRef>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawLocalDataset {
    Uri(String),
    Full(LocalDataset),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResource {
    name: String,
    kind: ResourceKind,
    #[serde(default)]
    lrm: Option<LrmKind>,
    #[serde(default)]
    dialect: Option<String>,
    #[serde(default)]
    allows_incoming_connections: Option<bool>,
    #[serde(default)]
    no_proxy: bool,
    #[serde(default)]
    mpi_capable: bool,
    #[serde(default)]
    can_compile: bool,
    #[serde(default = "one")]
    node_count: u32,
    #[serde(default)]
    local_datasets: Vec<RawLocalDataset>,
    #[serde(default)]
    queue_model: Option<QueueModelRef>,
}

fn one() -> u32 {
    1
}

impl TryFrom<RawResource> for ResourceDescriptor {
    type Error = String;

    fn try_from(raw: RawResource) -> Result<Self, String> {
        let lrm = raw.lrm.unwrap_or(match raw.kind {
            ResourceKind::HpcCluster => LrmKind::Batch,
            _ => LrmKind::None,
        });
        let r = ResourceDescriptor {
            allows_incoming_connections: raw.allows_incoming_connections.unwrap_or(raw.kind != ResourceKind::HpcCluster),
            name: raw.name,
            kind: raw.kind,
            lrm,
            dialect: raw.dialect,
            no_proxy: raw.no_proxy,
            mpi_capable: raw.mpi_capable,
            can_compile: raw.can_compile,
            node_count: raw.node_count,
            local_datasets: raw
                .local_datasets
                .into_iter()
                .map(|d| match d {
                    RawLocalDataset::Uri(uri) => LocalDataset { uri, access: DatasetAccess::Posix },
                    RawLocalDataset::Full(d) => d,
                })
                .collect(),
            queue_model: raw.queue_model,
        };
        r.validate()?;
        Ok(r)
    }
}

impl ResourceDescriptor {
    /// A resource with conventional defaults: HPC clusters block incoming
    /// connections, everything else accepts them.
    pub fn new(name: impl Into<String>, kind: ResourceKind, lrm: LrmKind, node_count: u32) -> Self {
        ResourceDescriptor {
            name: name.into(),
            kind,
            lrm,
            dialect: None,
            allows_incoming_connections: kind != ResourceKind::HpcCluster,
            no_proxy: false,
            mpi_capable: false,
            can_compile: false,
            node_count,
            local_datasets: Vec::new(),
            queue_model: None,
        }
    }

    pub fn wt(name: impl Into<String>) -> Self {
        Self::new(name, ResourceKind::WtCluster, LrmKind::None, 1)
    }

    pub fn hpc_batch(name: impl Into<String>, node_count: u32) -> Self {
        Self::new(name, ResourceKind::HpcCluster, LrmKind::Batch, node_count)
    }

    pub fn cloud(name: impl Into<String>) -> Self {
        Self::new(name, ResourceKind::Cloud, LrmKind::None, 1)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.name.is_empty() {
            return Err("resource name is empty".into());
        }
        if self.node_count == 0 {
            return Err(format!("{}: node_count must be at least 1", self.name));
        }
        if self.kind == ResourceKind::WtCluster && (self.lrm != LrmKind::None || !self.allows_incoming_connections) {
            return Err(format!("{}: a wt_cluster has no LRM and accepts incoming connections", self.name));
        }
        Ok(())
    }

    pub fn local_access(&self, uri: &str) -> Option<DatasetAccess> {
        self.local_datasets.iter().find(|d| d.uri == uri).map(|d| d.access)
    }

    pub fn is_hpc(&self) -> bool {
        self.kind == ResourceKind::HpcCluster
    }

    pub fn is_hpc_batch(&self) -> bool {
        self.is_hpc() && self.lrm == LrmKind::Batch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExecutionModel {
    #[serde(rename = "M1_wt_cluster")]
    M1WtCluster,
    #[serde(rename = "M2_hpc_node")]
    M2HpcNode,
    #[serde(rename = "M3_hpc_node_local_lrm")]
    M3HpcNodeLocalLrm,
    #[serde(rename = "M4_hpc_mpi")]
    M4HpcMpi,
    #[serde(rename = "M5_wt_frontend_remote_lrm")]
    M5WtFrontendRemoteLrm,
    #[serde(rename = "M6_decoupled_remote_lrm")]
    M6DecoupledRemoteLrm,
}

impl ExecutionModel {
    pub const ALL: [ExecutionModel; 6] = [
        ExecutionModel::M1WtCluster,
        ExecutionModel::M2HpcNode,
        ExecutionModel::M3HpcNodeLocalLrm,
        ExecutionModel::M4HpcMpi,
        ExecutionModel::M5WtFrontendRemoteLrm,
        ExecutionModel::M6DecoupledRemoteLrm,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ExecutionModel::M1WtCluster => "M1",
            ExecutionModel::M2HpcNode => "M2",
            ExecutionModel::M3HpcNodeLocalLrm => "M3",
            ExecutionModel::M4HpcMpi => "M4",
            ExecutionModel::M5WtFrontendRemoteLrm => "M5",
            ExecutionModel::M6DecoupledRemoteLrm => "M6",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExecutionModel::M1WtCluster => "M1_wt_cluster",
            ExecutionModel::M2HpcNode => "M2_hpc_node",
            ExecutionModel::M3HpcNodeLocalLrm => "M3_hpc_node_local_lrm",
            ExecutionModel::M4HpcMpi => "M4_hpc_mpi",
            ExecutionModel::M5WtFrontendRemoteLrm => "M5_wt_frontend_remote_lrm",
            ExecutionModel::M6DecoupledRemoteLrm => "M6_decoupled_remote_lrm",
        }
    }

    /// Whether the model puts its frontend on an HPC allocation.
    pub fn frontend_on_hpc(self) -> bool {
        matches!(self, ExecutionModel::M2HpcNode | ExecutionModel::M3HpcNodeLocalLrm | ExecutionModel::M4HpcMpi)
    }

    /// Whether `resource` can host this model's frontend.
    pub fn can_host_frontend(self, resource: &ResourceDescriptor) -> bool {
        match self {
            ExecutionModel::M1WtCluster | ExecutionModel::M5WtFrontendRemoteLrm => resource.kind == ResourceKind::WtCluster,
            ExecutionModel::M2HpcNode => resource.is_hpc() && resource.lrm == LrmKind::None,
            ExecutionModel::M3HpcNodeLocalLrm => resource.is_hpc_batch(),
            ExecutionModel::M4HpcMpi => resource.is_hpc_batch() && resource.mpi_capable,
            ExecutionModel::M6DecoupledRemoteLrm => true,
        }
    }
}

impl fmt::Display for ExecutionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExecutionModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ExecutionModel::ALL
            .into_iter()
            .find(|m| m.code().eq_ignore_ascii_case(s) || m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown execution model {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadRequirements {
    #[serde(default)]
    pub needs_hpc: bool,
    #[serde(default)]
    pub needs_mpi: bool,
    #[serde(default = "one")]
    pub min_nodes: u32,
    #[serde(default)]
    pub dataset_uris: BTreeSet<String>,
    /// Frontend resource named by the user. Pins every model's frontend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frontend_resource: Option<String>,
    /// Opaque credential name handed to the job middleware.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential: Option<String>,
}

impl Default for WorkloadRequirements {
    fn default() -> Self {
        WorkloadRequirements {
            needs_hpc: false,
            needs_mpi: false,
            min_nodes: 1,
            dataset_uris: BTreeSet::new(),
            frontend_resource: None,
            credential: None,
        }
    }
}

impl WorkloadRequirements {
    pub fn hpc(min_nodes: u32) -> Self {
        WorkloadRequirements { needs_hpc: true, min_nodes, ..Default::default() }
    }

    pub fn mpi(min_nodes: u32) -> Self {
        WorkloadRequirements { needs_hpc: true, needs_mpi: true, min_nodes, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.needs_mpi && !self.needs_hpc {
            return Err("needs_mpi requires needs_hpc".into());
        }
        if self.min_nodes == 0 {
            return Err("min_nodes must be at least 1".into());
        }
        Ok(())
    }

    fn workload_capable(&self, r: &ResourceDescriptor) -> bool {
        r.is_hpc_batch() && r.node_count >= self.min_nodes && (!self.needs_mpi || r.mpi_capable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    MinTimeToFrontend,
    MinDataMovement,
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "min_time_to_frontend" | "time" => Ok(Objective::MinTimeToFrontend),
            "min_data_movement" | "data" => Ok(Objective::MinDataMovement),
            other => Err(format!("unknown objective {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feasibility {
    pub model: ExecutionModel,
    pub feasible: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementPlan {
    pub model: ExecutionModel,
    pub frontend_resource: String,
    pub workload_resources: Vec<String>,
    pub proxy_required: bool,
    pub staging_actions: Vec<StagingAction>,
    pub estimated_time_to_frontend: SimDuration,
    /// Bytes fetched from external repositories by the staging actions.
    pub data_movement_bytes: u64,
    pub credential: String,
    pub user_override: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("inventory is empty")]
    EmptyInventory,
    #[error("invalid requirements: {0}")]
    InvalidRequirements(String),
    #[error("invalid resource: {0}")]
    InvalidResource(String),
    #[error("resource {0} appears twice in the inventory")]
    DuplicateResource(String),
    #[error("unknown resource {0}")]
    UnknownResource(String),
    #[error("dataset {0} has no catalog entry")]
    UnknownDataset(String),
    #[error("resource {resource} refers to unknown queue {queue}")]
    UnknownQueue { resource: String, queue: String },
    #[error("{model} cannot place a frontend on {resource}")]
    Incompatible { model: ExecutionModel, resource: String },
    #[error("infeasible: {}", render_reasons(.0))]
    Infeasible(Vec<Feasibility>),
}

fn render_reasons(rows: &[Feasibility]) -> String {
    rows.iter().map(|f| format!("{}: {}", f.model.code(), f.reason)).collect::<Vec<_>>().join("; ")
}

/// Warm pilot capacity on a frontend resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolState {
    pub warm_slots: usize,
    pub dispatch_overhead: SimDuration,
}

/// Expected delay until the frontend of `model` on `resource` is usable.
///
/// Frontends outside HPC allocations take the image load. Frontends on HPC
/// allocations add the analytic mean queue wait, or only the dispatch
/// overhead when a warm pilot is available.
pub fn estimate_time_to_frontend(
    model: ExecutionModel,
    resource: &ResourceDescriptor,
    image_load: SimDuration,
    queue: Option<&QueueModel>,
    pool: Option<&PoolState>,
) -> Result<SimDuration, PlanError> {
    if !model.can_host_frontend(resource) {
        return Err(PlanError::Incompatible { model, resource: resource.name.clone() });
    }
    if !resource.is_hpc() {
        return Ok(image_load);
    }
    if let Some(p) = pool.filter(|p| p.warm_slots > 0) {
        return Ok(image_load + p.dispatch_overhead);
    }
    Ok(image_load + queue.map(QueueModel::expected_wait).unwrap_or(SimDuration::ZERO))
}

/// Feasibility of all six models, in model order.
pub fn enumerate_feasible_models(
    req: &WorkloadRequirements,
    inventory: &[ResourceDescriptor],
) -> Result<Vec<Feasibility>, PlanError> {
    check_inputs(req, inventory)?;
    Ok(ExecutionModel::ALL
        .into_iter()
        .map(|model| match candidates(model, req, inventory) {
            Ok(c) => Feasibility { model, feasible: true, reason: describe(&c[0], inventory) },
            Err(reason) => Feasibility { model, feasible: false, reason },
        })
        .collect())
}

fn check_inputs(req: &WorkloadRequirements, inventory: &[ResourceDescriptor]) -> Result<(), PlanError> {
    if inventory.is_empty() {
        return Err(PlanError::EmptyInventory);
    }
    req.validate().map_err(PlanError::InvalidRequirements)?;
    let mut seen = BTreeSet::new();
    for r in inventory {
        r.validate().map_err(PlanError::InvalidResource)?;
        if !seen.insert(r.name.as_str()) {
            return Err(PlanError::DuplicateResource(r.name.clone()));
        }
    }
    if let Some(f) = &req.frontend_resource {
        if !seen.contains(f.as_str()) {
            return Err(PlanError::UnknownResource(f.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Candidate {
    frontend: usize,
    workload: Vec<usize>,
}

fn describe(c: &Candidate, inventory: &[ResourceDescriptor]) -> String {
    let front = &inventory[c.frontend].name;
    match c.workload.first() {
        Some(&w) if w != c.frontend => format!("frontend on {front}, workload on {}", inventory[w].name),
        Some(_) => format!("frontend and workload on {front}"),
        None => format!("frontend on {front}"),
    }
}

/// Every (frontend, workload) placement of `model`, in inventory order, or
/// the reason there is none.
fn candidates(model: ExecutionModel, req: &WorkloadRequirements, inv: &[ResourceDescriptor]) -> Result<Vec<Candidate>, String> {
    let idx = |pred: &dyn Fn(&ResourceDescriptor) -> bool| -> Vec<usize> {
        inv.iter().enumerate().filter(|(_, r)| pred(r)).map(|(i, _)| i).collect()
    };
    let on_self = |i: usize| Candidate { frontend: i, workload: if req.needs_hpc { vec![i] } else { Vec::new() } };
    let single_node = |what: &str| -> Result<(), String> {
        if req.needs_mpi {
            return Err(format!("MPI required; {what} runs no MPI workloads"));
        }
        if req.min_nodes != 1 {
            return Err(format!("workload needs {} nodes; {what} offers one", req.min_nodes));
        }
        Ok(())
    };

    let found = match model {
        ExecutionModel::M1WtCluster => {
            single_node("the deployment cluster")?;
            let wts = idx(&|r| r.kind == ResourceKind::WtCluster);
            if wts.is_empty() {
                return Err("no wt_cluster resource".into());
            }
            wts.into_iter().map(on_self).collect::<Vec<_>>()
        }
        ExecutionModel::M2HpcNode => {
            single_node("a single HPC node")?;
            let nodes = idx(&|r| r.is_hpc() && r.lrm == LrmKind::None);
            if nodes.is_empty() {
                return Err("no hpc_cluster node reachable without an LRM".into());
            }
            nodes.into_iter().map(on_self).collect()
        }
        ExecutionModel::M3HpcNodeLocalLrm => {
            if req.needs_mpi {
                return Err("MPI required; this model runs serial workloads".into());
            }
            let hs = idx(&|r| r.is_hpc_batch() && r.node_count >= req.min_nodes);
            if hs.is_empty() {
                return Err(format!("no batch hpc_cluster with at least {} nodes", req.min_nodes));
            }
            hs.into_iter().map(on_self).collect()
        }
        ExecutionModel::M4HpcMpi => {
            let hs = idx(&|r| r.is_hpc_batch() && r.mpi_capable && r.node_count >= req.min_nodes);
            if hs.is_empty() {
                return Err(format!("no MPI-capable resource with at least {} nodes", req.min_nodes));
            }
            hs.into_iter().map(on_self).collect()
        }
        ExecutionModel::M5WtFrontendRemoteLrm | ExecutionModel::M6DecoupledRemoteLrm => {
            let hs = idx(&|r| req.workload_capable(r));
            if hs.is_empty() {
                return Err(if req.needs_mpi {
                    format!("no batch hpc_cluster with MPI and at least {} nodes", req.min_nodes)
                } else {
                    format!("no batch hpc_cluster with at least {} nodes", req.min_nodes)
                });
            }
            let fronts = if model == ExecutionModel::M5WtFrontendRemoteLrm {
                let wts = idx(&|r| r.kind == ResourceKind::WtCluster);
                if wts.is_empty() {
                    return Err("no wt_cluster resource for the frontend".into());
                }
                wts
            } else {
                (0..inv.len()).collect()
            };
            let mut out = Vec::new();
            for &f in &fronts {
                for &h in &hs {
                    out.push(Candidate { frontend: f, workload: if req.needs_hpc { vec![h] } else { Vec::new() } });
                }
            }
            out
        }
    };

    match &req.frontend_resource {
        None => Ok(found),
        Some(name) => {
            let pinned: Vec<_> = found.into_iter().filter(|c| &inv[c.frontend].name == name).collect();
            if pinned.is_empty() {
                Err(format!("frontend pinned to {name} by user, which this model cannot host"))
            } else {
                Ok(pinned)
            }
        }
    }
}

/// Planning inputs beyond requirements and inventory.
#[derive(Debug, Clone)]
pub struct PlannerConfig {
    pub image_load: SimDuration,
    pub dispatch_overhead: SimDuration,
    /// Queue table resolved by [`QueueModelRef::Named`].
    pub queues: BTreeMap<String, QueueModel>,
    /// Warm pilot slots per resource name.
    pub warm_pilots: BTreeMap<String, usize>,
    pub catalog: DatasetCatalog,
    pub default_credential: String,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            image_load: SimDuration::from_secs(8),
            dispatch_overhead: SimDuration::from_millis(500),
            queues: BTreeMap::new(),
            warm_pilots: BTreeMap::new(),
            catalog: DatasetCatalog::new(),
            default_credential: "default".into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Planner {
    pub config: PlannerConfig,
}

struct Scored {
    model: ExecutionModel,
    candidate: Candidate,
    ttf: SimDuration,
    bytes: u64,
    staging: Vec<StagingAction>,
}

impl Planner {
    pub fn new(config: PlannerConfig) -> Self {
        Planner { config }
    }

    pub fn queue_for<'a>(&'a self, resource: &'a ResourceDescriptor) -> Result<Option<&'a QueueModel>, PlanError> {
        match &resource.queue_model {
            None => Ok(None),
            Some(QueueModelRef::Inline(q)) => Ok(Some(q)),
            Some(QueueModelRef::Named(n)) => self
                .config
                .queues
                .get(n)
                .map(Some)
                .ok_or_else(|| PlanError::UnknownQueue { resource: resource.name.clone(), queue: n.clone() }),
        }
    }

    pub fn estimate(&self, model: ExecutionModel, resource: &ResourceDescriptor) -> Result<SimDuration, PlanError> {
        let pool = self
            .config
            .warm_pilots
            .get(&resource.name)
            .map(|&warm_slots| PoolState { warm_slots, dispatch_overhead: self.config.dispatch_overhead });
        estimate_time_to_frontend(model, resource, self.config.image_load, self.queue_for(resource)?, pool.as_ref())
    }

    fn score(&self, model: ExecutionModel, c: Candidate, req: &WorkloadRequirements, inv: &[ResourceDescriptor]) -> Result<Scored, PlanError> {
        let ttf = self.estimate(model, &inv[c.frontend])?;
        let consumers: Vec<usize> = if c.workload.is_empty() { vec![c.frontend] } else { c.workload.clone() };
        let mut staging = BTreeSet::new();
        let mut fetched = BTreeSet::new();
        for uri in &req.dataset_uris {
            let data_ref = self.config.catalog.get(uri).ok_or_else(|| PlanError::UnknownDataset(uri.clone()))?;
            for &r in &consumers {
                let action = resolve_local(data_ref, &inv[r]);
                if action.action == StagingKind::CacheFetch {
                    fetched.insert(uri.as_str());
                }
                staging.insert(action);
            }
        }
        let bytes = fetched.iter().map(|u| self.config.catalog.get(u).map_or(0, |d| d.size_bytes)).sum();
        Ok(Scored { model, candidate: c, ttf, bytes, staging: staging.into_iter().collect() })
    }

    /// Picks the feasible model minimizing `objective`; ties go to the
    /// earlier model. Within a model the best placement wins, then the
    /// earlier resources in inventory order.
    pub fn plan_placement(
        &self,
        req: &WorkloadRequirements,
        inventory: &[ResourceDescriptor],
        objective: Objective,
    ) -> Result<PlacementPlan, PlanError> {
        self.plan_filtered(req, inventory, objective, None)
    }

    /// Plans with `model` forced; fails unless that model is feasible.
    pub fn plan_model(
        &self,
        req: &WorkloadRequirements,
        inventory: &[ResourceDescriptor],
        objective: Objective,
        model: ExecutionModel,
    ) -> Result<PlacementPlan, PlanError> {
        self.plan_filtered(req, inventory, objective, Some(model))
    }

    fn plan_filtered(
        &self,
        req: &WorkloadRequirements,
        inventory: &[ResourceDescriptor],
        objective: Objective,
        only: Option<ExecutionModel>,
    ) -> Result<PlacementPlan, PlanError> {
        let table = enumerate_feasible_models(req, inventory)?;
        let key = |s: &Scored| match objective {
            Objective::MinTimeToFrontend => (s.ttf.as_micros(), s.bytes),
            Objective::MinDataMovement => (s.bytes, s.ttf.as_micros()),
        };
        let mut best: Option<Scored> = None;
        for row in table.iter().filter(|f| f.feasible && only.is_none_or(|m| m == f.model)) {
            let mut model_best: Option<Scored> = None;
            for c in candidates(row.model, req, inventory).unwrap_or_default() {
                let s = self.score(row.model, c, req, inventory)?;
                if model_best.as_ref().is_none_or(|b| key(&s) < key(b)) {
                    model_best = Some(s);
                }
            }
            if let Some(s) = model_best {
                // primary objective only across models, so equal scores keep the earlier model
                if best.as_ref().is_none_or(|b| key(&s).0 < key(b).0) {
                    best = Some(s);
                }
            }
        }
        let Some(s) = best else {
            return Err(PlanError::Infeasible(table));
        };

        let frontend = &inventory[s.candidate.frontend];
        let user_override = req.frontend_resource.is_some();
        let mut reasons = vec![
            format!("{} selected by {:?}", s.model.code(), objective),
            describe(&s.candidate, inventory),
            format!("estimated time to frontend {} s", s.ttf.to_decimal()),
        ];
        if user_override {
            reasons.push("user_override=true".into());
        }
        for row in table.iter().filter(|f| !f.feasible) {
            reasons.push(format!("{} infeasible: {}", row.model.code(), row.reason));
        }
        Ok(PlacementPlan {
            model: s.model,
            frontend_resource: frontend.name.clone(),
            workload_resources: s.candidate.workload.iter().map(|&i| inventory[i].name.clone()).collect(),
            proxy_required: !frontend.allows_incoming_connections,
            staging_actions: s.staging,
            estimated_time_to_frontend: s.ttf,
            data_movement_bytes: s.bytes,
            credential: req.credential.clone().unwrap_or_else(|| self.config.default_credential.clone()),
            user_override,
            reasons,
        })
    }
}

/// [`Planner::plan_placement`] with default configuration.
pub fn plan_placement(
    req: &WorkloadRequirements,
    inventory: &[ResourceDescriptor],
    objective: Objective,
) -> Result<PlacementPlan, PlanError> {
    Planner::default().plan_placement(req, inventory, objective)
}
