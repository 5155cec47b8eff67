mod common;

use std::sync::Arc;
use std::thread;

use common::{pbs, rig};
use talescale::lrm::{CancelAck, JobSpec, JobState, LrmError, Middleware, MiddlewareConfig, Verb};
use talescale::planner::ResourceDescriptor;
use talescale::sim::lrm::{Flavor, SimLrm};
use talescale::sim::transport::{NetworkModel, SimTransport};
use talescale::sim::{MaintenanceWindow, QueueModel};
use talescale::tale::{create_tale, ArtifactKind, CodeArtifact, EnvironmentSpec, ProvenanceKind, TaleStore};
use talescale::{ManualClock, SimDuration, SimTime};

fn sleep(resource: &str, credential: &str, secs: u64) -> JobSpec {
    JobSpec::new(resource, credential, &["sleep", &secs.to_string()])
}

#[test]
fn one_query_per_resource_per_cycle() {
    let r = rig(&[pbs("a", QueueModel::fixed(10)), pbs("b", QueueModel::fixed(10))], NetworkModel::default(), None);
    for i in 0..50 {
        let res = if i % 2 == 0 { "a" } else { "b" };
        let cred = ["alice", "bob", "carol"][i % 3];
        r.mw.submit(sleep(res, cred, 100)).unwrap();
    }
    assert_eq!(r.mw.active_pollers(), 2);
    for t in [5, 10, 15] {
        r.at(t);
        r.mw.poll_all();
    }
    let log = r.mw.transport_log();
    assert_eq!(log.count_for("a", Verb::BatchStatus), 3);
    assert_eq!(log.count_for("b", Verb::BatchStatus), 3);
    assert_eq!(r.mw.counters().backend_queries, 6);
    let states: Vec<_> = r.mw.job_ids().into_iter().map(|id| r.mw.status(id).unwrap().state).collect();
    assert!(states.iter().all(|s| *s == JobState::Running));
    // Running from t=10 exactly, whichever poll saw it
    let h = r.mw.status(r.mw.job_ids()[0]).unwrap();
    assert_eq!(h.entered(JobState::Running), Some(SimTime::from_secs(10)));
}

#[test]
fn pollers_stop_when_jobs_finish() {
    let r = rig(&[pbs("a", QueueModel::fixed(0))], NetworkModel::default(), None);
    r.mw.submit(sleep("a", "alice", 3)).unwrap();
    r.at(5);
    r.mw.poll_all();
    assert_eq!(r.mw.active_pollers(), 0);
    let before = r.mw.transport_log().len();
    r.at(10);
    r.mw.poll_all();
    assert_eq!(r.mw.transport_log().len(), before);
}

#[test]
fn sessions_reused_without_ttl() {
    let r = rig(&[pbs("a", QueueModel::fixed(0)), pbs("b", QueueModel::fixed(0))], NetworkModel::default(), None);
    let pairs = [("a", "alice"), ("a", "bob"), ("b", "alice")];
    for i in 0..500u64 {
        let (res, cred) = pairs[(i % 3) as usize];
        r.at(i);
        r.mw.submit(sleep(res, cred, 1_000_000)).unwrap();
    }
    assert_eq!(r.mw.counters().handshakes, 3);
    assert_eq!(r.mw.transport_log().count(Verb::Handshake), 3);
}

#[test]
fn expired_sessions_reconnect() {
    let r = rig(&[pbs("a", QueueModel::fixed(0))], NetworkModel::default(), Some(SimDuration::from_secs(10)));
    for i in 0..20u64 {
        r.at(i * 15);
        r.mw.submit(sleep("a", "alice", 1)).unwrap();
    }
    assert_eq!(r.mw.counters().handshakes, 20);
}

#[test]
fn subscription_streams_in_order_and_ends() {
    let r = rig(&[pbs("a", QueueModel::fixed(10))], NetworkModel::default(), None);
    let h = r.mw.submit(sleep("a", "alice", 20)).unwrap();
    let rx = r.mw.subscribe(h.job_id).unwrap();
    for t in (5..=40).step_by(5) {
        r.at(t);
        r.mw.poll_all();
    }
    let seen: Vec<_> = rx.iter().map(|t| (t.from, t.to)).collect();
    assert_eq!(
        seen,
        [(JobState::Submitted, JobState::Queued), (JobState::Queued, JobState::Running), (JobState::Running, JobState::Completed)]
    );
    let late: Vec<_> = r.mw.subscribe(h.job_id).unwrap().iter().collect();
    assert_eq!(late.len(), 1);
    assert_eq!(late[0].to, JobState::Completed);
}

#[test]
fn cancel_is_confirmed_by_poll_and_idempotent() {
    let r = rig(&[pbs("a", QueueModel::fixed(100))], NetworkModel::default(), None);
    let h = r.mw.submit(sleep("a", "alice", 20)).unwrap();
    r.at(1);
    assert_eq!(r.mw.cancel(h.job_id).unwrap(), CancelAck::Requested);
    assert_eq!(r.mw.status(h.job_id).unwrap().state, JobState::Submitted);
    r.at(5);
    r.mw.poll_all();
    assert_eq!(r.mw.status(h.job_id).unwrap().state, JobState::Canceled);
    assert_eq!(r.mw.cancel(h.job_id).unwrap(), CancelAck::AlreadyTerminal(JobState::Canceled));

    let done = r.mw.submit(sleep("a", "alice", 1)).unwrap();
    r.at(200);
    r.mw.poll_all();
    assert_eq!(r.mw.status(done.job_id).unwrap().state, JobState::Completed);
    assert_eq!(r.mw.cancel(done.job_id).unwrap(), CancelAck::AlreadyTerminal(JobState::Completed));
}

#[test]
fn failing_workloads_carry_exit_codes() {
    let r = rig(&[("s", Flavor::Slurm, QueueModel::fixed(0))], NetworkModel::default(), None);
    let h = r.mw.submit(JobSpec::new("s", "alice", &["fail", "2", "3"])).unwrap();
    r.at(5);
    r.mw.poll_all();
    let st = r.mw.status(h.job_id).unwrap();
    assert_eq!(st.state, JobState::Failed);
    assert_eq!(st.exit_code, Some(3));
}

#[test]
fn validation_errors() {
    let r = rig(&[pbs("a", QueueModel::fixed(0))], NetworkModel::default(), None);
    assert!(matches!(r.mw.submit(sleep("zz", "alice", 1)), Err(LrmError::UnknownResource(_))));
    assert!(matches!(r.mw.submit(sleep("a", "mallory", 1)), Err(LrmError::UnknownCredential(_))));
    let mut big = sleep("a", "alice", 1);
    big.node_count = 65;
    assert!(matches!(r.mw.submit(big), Err(LrmError::TooManyNodes { .. })));
    assert!(matches!(r.mw.status(talescale::lrm::JobId(999)), Err(LrmError::UnknownJob(_))));
}

#[test]
fn unregistered_dialect_is_an_error_not_a_fallback() {
    let clock = Arc::new(ManualClock::new(SimTime::ZERO));
    let mw = Middleware::new(clock, Arc::new(SimTransport::new(NetworkModel::default(), 1)), MiddlewareConfig::default());
    let mut r = ResourceDescriptor::hpc_batch("x", 4);
    r.dialect = Some("lsf".into());
    mw.register_resource(&r).unwrap();
    mw.register_credential("alice");
    let err = mw.submit(sleep("x", "alice", 1)).unwrap_err();
    assert!(matches!(err, LrmError::UnregisteredDialect { ref dialect, .. } if dialect == "lsf"), "{err}");
}

#[test]
fn unreachable_resource_fails_the_job_and_polls_defer() {
    let mut net = NetworkModel::default();
    net.outages.insert("a".into(), vec![MaintenanceWindow { start: SimTime::from_secs(100), end: SimTime::from_secs(200) }]);
    let r = rig(&[pbs("a", QueueModel::fixed(50))], net, None);
    let ok = r.mw.submit(sleep("a", "alice", 300)).unwrap();
    r.at(120);
    let lost = r.mw.submit(sleep("a", "bob", 1)).unwrap();
    let st = r.mw.status(lost.job_id).unwrap();
    assert_eq!(st.state, JobState::Failed);
    assert!(st.cause.unwrap().contains("unreachable"));
    r.mw.poll_all();
    assert_eq!(r.mw.counters().poll_failures, 1);
    assert_eq!(r.mw.status(ok.job_id).unwrap().state, JobState::Submitted);
    r.at(205);
    r.mw.poll_all();
    let st = r.mw.status(ok.job_id).unwrap();
    assert_eq!(st.state, JobState::Running);
    assert_eq!(st.entered(JobState::Running), Some(SimTime::from_secs(50)));
}

#[test]
fn refused_credentials_surface_as_failures() {
    let mut net = NetworkModel::default();
    net.refused.insert("a/bob".into());
    let r = rig(&[pbs("a", QueueModel::fixed(0))], net, None);
    let h = r.mw.submit(sleep("a", "bob", 1)).unwrap();
    assert_eq!(r.mw.status(h.job_id).unwrap().state, JobState::Failed);
    assert_eq!(r.mw.counters().handshake_failures, 1);
}

#[test]
fn concurrent_submitters_get_distinct_ids() {
    let r = rig(&[pbs("a", QueueModel::fixed(0))], NetworkModel::default(), None);
    let handles: Vec<_> = (0..8)
        .map(|t| {
            let mw = r.mw.clone();
            thread::spawn(move || (0..50).map(|_| mw.submit(sleep("a", ["alice", "bob"][t % 2], 10)).unwrap().job_id).collect::<Vec<_>>())
        })
        .collect();
    let mut ids: Vec<_> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 400);
    assert_eq!(r.mw.counters().handshakes, 2);
    r.at(5);
    r.mw.poll_all();
    assert_eq!(r.mw.transport_log().count(Verb::BatchStatus), 1);
}

#[test]
fn job_events_land_in_tale_provenance() {
    let clock = Arc::new(ManualClock::new(SimTime::ZERO));
    let mut transport = SimTransport::new(NetworkModel::default(), 5);
    transport.attach("a", SimLrm::new("a", Flavor::Pbs, QueueModel::fixed(10), 4, 1));
    let store = Arc::new(TaleStore::new());
    let code = CodeArtifact::new("run.py", ArtifactKind::Source, None, b"print(1)").unwrap();
    let tale = create_tale("prov", vec![code], vec![], EnvironmentSpec::new("python:3.11"), 0).unwrap();
    let id = tale.id.clone();
    store.insert(tale).unwrap();
    let mw = Middleware::new(clock.clone(), Arc::new(transport), MiddlewareConfig::default()).with_provenance(store.clone());
    mw.register_dialect("sim-pbs", Arc::new(talescale::lrm::PbsDialect)).unwrap();
    let mut r = ResourceDescriptor::hpc_batch("a", 4);
    r.dialect = Some("sim-pbs".into());
    mw.register_resource(&r).unwrap();
    mw.register_credential("alice");
    let mut spec = sleep("a", "alice", 5);
    spec.tale_id = Some(id.clone());
    mw.submit(spec).unwrap();
    clock.advance_to(SimTime::from_secs(30));
    mw.poll_all();
    let kinds: Vec<_> = store.get(&id).unwrap().provenance().iter().map(|e| e.kind).collect();
    assert_eq!(
        kinds,
        [
            ProvenanceKind::Created,
            ProvenanceKind::JobSubmitted,
            ProvenanceKind::JobStateChange,
            ProvenanceKind::JobStateChange,
            ProvenanceKind::JobStateChange
        ]
    );
}
