//! Public routes to frontends on nodes that accept no incoming connections.
//!
//! Each live frontend gets one path `/tales/<tale_id>/`. Requests under
//! that path are forwarded byte for byte to the frontend's internal
//! endpoint over a [`Network`], and every exchange is logged.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::tale::TaleId;
use crate::time::{Clock, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub resource: String,
    pub node: String,
    pub port: u16,
}

impl Endpoint {
    pub fn new(resource: impl Into<String>, node: impl Into<String>, port: u16) -> Self {
        Endpoint { resource: resource.into(), node: node.into(), port }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub public_path: String,
    pub tale_id: TaleId,
    pub internal_endpoint: Endpoint,
    pub created_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProxyError {
    #[error("tale {0} already has a route")]
    Duplicate(TaleId),
    #[error("no route for {0}")]
    NotFound(String),
    #[error("policy of {resource} forbids proxied access to its compute nodes")]
    PolicyForbidden { resource: String },
    #[error("endpoint {endpoint:?} unreachable: {cause}")]
    Unreachable { endpoint: Endpoint, cause: String },
}

/// Delivers request bytes to an internal endpoint and returns the reply.
pub trait Network: Send + Sync {
    fn forward(&self, endpoint: &Endpoint, request: &[u8]) -> Result<Vec<u8>, String>;
}

/// In-process network of echo frontends: every registered endpoint returns
/// the request unchanged.
#[derive(Debug, Default)]
pub struct EchoNetwork {
    down: RwLock<BTreeSet<Endpoint>>,
}

impl EchoNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn take_down(&self, endpoint: Endpoint) {
        self.down.write().insert(endpoint);
    }
}

impl Network for EchoNetwork {
    fn forward(&self, endpoint: &Endpoint, request: &[u8]) -> Result<Vec<u8>, String> {
        if self.down.read().contains(endpoint) {
            return Err("connection refused".into());
        }
        Ok(request.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardRecord {
    pub t: SimTime,
    pub public_path: String,
    pub tale_id: TaleId,
    pub endpoint: Endpoint,
    pub request_bytes: usize,
    pub response_bytes: usize,
    pub request_digest: Digest,
    pub response_digest: Digest,
}

#[derive(Default)]
struct Routes {
    by_tale: BTreeMap<TaleId, Arc<Route>>,
    by_path: BTreeMap<String, TaleId>,
}

pub struct ProxyRegistry {
    clock: Arc<dyn Clock>,
    network: Arc<dyn Network>,
    no_proxy: BTreeSet<String>,
    routes: RwLock<Routes>,
    log: Mutex<Vec<ForwardRecord>>,
}

impl std::fmt::Debug for ProxyRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProxyRegistry").field("no_proxy", &self.no_proxy).field("routes", &self.routes.read().by_path).finish()
    }
}

pub fn public_path(tale: &TaleId) -> String {
    format!("/tales/{tale}/")
}

impl ProxyRegistry {
    /// `no_proxy` names resources whose policy forbids proxied access.
    pub fn new(clock: Arc<dyn Clock>, network: Arc<dyn Network>, no_proxy: impl IntoIterator<Item = String>) -> Self {
        ProxyRegistry {
            clock,
            network,
            no_proxy: no_proxy.into_iter().collect(),
            routes: RwLock::new(Routes::default()),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn register_endpoint(&self, tale_id: &TaleId, endpoint: Endpoint) -> Result<Route, ProxyError> {
        let mut routes = self.routes.write();
        if routes.by_tale.contains_key(tale_id) {
            return Err(ProxyError::Duplicate(tale_id.clone()));
        }
        let route = Route {
            public_path: public_path(tale_id),
            tale_id: tale_id.clone(),
            internal_endpoint: endpoint,
            created_at: self.clock.now(),
        };
        routes.by_path.insert(route.public_path.clone(), tale_id.clone());
        routes.by_tale.insert(tale_id.clone(), Arc::new(route.clone()));
        Ok(route)
    }

    /// Idempotent: removing a missing route does nothing.
    pub fn deregister(&self, tale_id: &TaleId) {
        let mut routes = self.routes.write();
        if let Some(r) = routes.by_tale.remove(tale_id) {
            routes.by_path.remove(&r.public_path);
        }
    }

    pub fn routes(&self) -> Vec<Route> {
        self.routes.read().by_tale.values().map(|r| (**r).clone()).collect()
    }

    fn lookup(&self, path: &str) -> Option<Arc<Route>> {
        let rest = path.strip_prefix("/tales/")?;
        let id = rest.split('/').next()?;
        let routes = self.routes.read();
        let tale = routes.by_path.get(&format!("/tales/{id}/"))?;
        routes.by_tale.get(tale).cloned()
    }

    /// Forwards `request` to the frontend owning `path` and returns its
    /// reply unmodified.
    pub fn route(&self, path: &str, request: &[u8]) -> Result<Vec<u8>, ProxyError> {
        let route = self.lookup(path).ok_or_else(|| ProxyError::NotFound(path.to_string()))?;
        let endpoint = &route.internal_endpoint;
        if self.no_proxy.contains(&endpoint.resource) {
            return Err(ProxyError::PolicyForbidden { resource: endpoint.resource.clone() });
        }
        let response = self
            .network
            .forward(endpoint, request)
            .map_err(|cause| ProxyError::Unreachable { endpoint: endpoint.clone(), cause })?;
        self.log.lock().push(ForwardRecord {
            t: self.clock.now(),
            public_path: route.public_path.clone(),
            tale_id: route.tale_id.clone(),
            endpoint: endpoint.clone(),
            request_bytes: request.len(),
            response_bytes: response.len(),
            request_digest: Digest::of(request),
            response_digest: Digest::of(&response),
        });
        Ok(response)
    }

    pub fn forwarding_log(&self) -> Vec<ForwardRecord> {
        self.log.lock().clone()
    }

    pub fn forwarding_ndjson(&self) -> String {
        self.log
            .lock()
            .iter()
            .map(|r| serde_json::to_string(r).expect("serializable") + "\n")
            .collect()
    }
}
