//! In-process stand-in for SSH: seeded round-trip times, scheduled outages
//! and refused credentials in front of the simulated batch systems.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lrm::SimLrm;
use super::queue::MaintenanceWindow;
use crate::lrm::{Reply, Transport, TransportError};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkModel {
    pub round_trip: SimDuration,
    /// Upper bound of the uniform extra delay added to every call.
    pub jitter: SimDuration,
    pub handshake: SimDuration,
    /// Per-resource intervals during which the resource is unreachable.
    pub outages: BTreeMap<String, Vec<MaintenanceWindow>>,
    /// `resource/credential` pairs whose handshakes are refused.
    pub refused: BTreeSet<String>,
}

impl Default for NetworkModel {
    fn default() -> Self {
        NetworkModel {
            round_trip: SimDuration::from_millis(50),
            jitter: SimDuration::from_millis(20),
            handshake: SimDuration::from_millis(300),
            outages: BTreeMap::new(),
            refused: BTreeSet::new(),
        }
    }
}

impl NetworkModel {
    fn down(&self, resource: &str, at: SimTime) -> bool {
        self.outages.get(resource).is_some_and(|ws| ws.iter().any(|w| w.contains(at)))
    }
}

#[derive(Debug)]
pub struct SimTransport {
    lrms: BTreeMap<String, Arc<Mutex<SimLrm>>>,
    network: NetworkModel,
    rng: Mutex<ChaCha8Rng>,
}

impl SimTransport {
    pub fn new(network: NetworkModel, seed: u64) -> Self {
        SimTransport { lrms: BTreeMap::new(), network, rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)) }
    }

    pub fn attach(&mut self, resource: &str, lrm: SimLrm) -> Arc<Mutex<SimLrm>> {
        let lrm = Arc::new(Mutex::new(lrm));
        self.lrms.insert(resource.to_string(), lrm.clone());
        lrm
    }

    pub fn lrm(&self, resource: &str) -> Option<&Arc<Mutex<SimLrm>>> {
        self.lrms.get(resource)
    }

    fn delay(&self, base: SimDuration) -> SimDuration {
        let jitter = self.network.jitter.as_micros();
        let extra = if jitter == 0 { 0 } else { self.rng.lock().random_range(0..=jitter) };
        base + SimDuration::from_micros(extra)
    }

    fn reachable(&self, resource: &str, at: SimTime) -> Result<&Arc<Mutex<SimLrm>>, TransportError> {
        let lrm = self.lrms.get(resource).ok_or_else(|| TransportError::Unreachable {
            resource: resource.into(),
            cause: "no such host".into(),
        })?;
        if self.network.down(resource, at) {
            return Err(TransportError::Unreachable { resource: resource.into(), cause: "connection timed out".into() });
        }
        Ok(lrm)
    }
}

impl Transport for SimTransport {
    fn handshake(&self, resource: &str, credential: &str, at: SimTime) -> Result<SimDuration, TransportError> {
        self.reachable(resource, at)?;
        if self.network.refused.contains(&format!("{resource}/{credential}")) {
            return Err(TransportError::Refused { resource: resource.into(), credential: credential.into() });
        }
        Ok(self.delay(self.network.handshake))
    }

    fn execute(&self, resource: &str, _credential: &str, command: &str, at: SimTime) -> Result<Reply, TransportError> {
        let lrm = self.reachable(resource, at)?;
        let output = lrm
            .lock()
            .execute(command, at)
            .map_err(|message| TransportError::Command { resource: resource.into(), message })?;
        Ok(Reply { output, elapsed: self.delay(self.network.round_trip) })
    }
}
