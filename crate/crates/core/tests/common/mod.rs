#![allow(dead_code)]

use std::sync::Arc;

use talescale::lrm::{Middleware, MiddlewareConfig, PbsDialect, SessionConfig, SlurmDialect};
use talescale::planner::ResourceDescriptor;
use talescale::sim::lrm::{Flavor, SimLrm};
use talescale::sim::transport::{NetworkModel, SimTransport};
use talescale::sim::QueueModel;
use talescale::{ManualClock, SimDuration, SimTime};

pub struct Rig {
    pub clock: Arc<ManualClock>,
    pub mw: Arc<Middleware>,
}

impl Rig {
    pub fn at(&self, secs: u64) {
        self.clock.advance_to(SimTime::from_secs(secs));
    }
}

/// A middleware over simulated resources `(name, flavor, queue)`, each
/// with 64 nodes and credentials `alice`, `bob` and `carol`.
pub fn rig(resources: &[(&str, Flavor, QueueModel)], network: NetworkModel, idle_ttl: Option<SimDuration>) -> Rig {
    let clock = Arc::new(ManualClock::new(SimTime::ZERO));
    let mut transport = SimTransport::new(network, 99);
    let config = MiddlewareConfig { sessions: SessionConfig { idle_ttl, ..SessionConfig::default() }, ..MiddlewareConfig::default() };
    let mut descriptors = Vec::new();
    for (i, (name, flavor, queue)) in resources.iter().enumerate() {
        transport.attach(name, SimLrm::new(*name, *flavor, queue.clone(), 64, i as u64 + 1));
        let mut r = ResourceDescriptor::hpc_batch(*name, 64);
        r.mpi_capable = true;
        r.dialect = Some(match flavor {
            Flavor::Pbs => "sim-pbs".into(),
            Flavor::Slurm => "sim-slurm".into(),
        });
        descriptors.push(r);
    }
    let mw = Middleware::new(clock.clone(), Arc::new(transport), config);
    mw.register_dialect("sim-pbs", Arc::new(PbsDialect)).unwrap();
    mw.register_dialect("sim-slurm", Arc::new(SlurmDialect)).unwrap();
    for r in &descriptors {
        mw.register_resource(r).unwrap();
    }
    for c in ["alice", "bob", "carol", "pilot"] {
        mw.register_credential(c);
    }
    Rig { clock, mw: Arc::new(mw) }
}

pub fn pbs(name: &str, queue: QueueModel) -> (&str, Flavor, QueueModel) {
    (name, Flavor::Pbs, queue)
}

pub mod lru;
pub mod tales;
