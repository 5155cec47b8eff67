mod common;

use common::{pbs, rig};
use talescale::lrm::{JobSpec, JobState};
use talescale::pilot::{PilotPool, PoolError, PoolPolicy, SlotState};
use talescale::sim::QueueModel;
use talescale::SimDuration;

fn pool(min_warm: usize, max_size: usize, walltime: u64) -> PoolPolicy {
    PoolPolicy::new("a", min_warm, max_size, SimDuration::from_secs(walltime))
}

#[test]
fn pilots_warm_and_serve_oldest_first() {
    let r = rig(&[pbs("a", QueueModel::fixed(100))], Default::default(), None);
    let p = PilotPool::configure(pool(2, 4, 10_000), r.mw.clone()).unwrap();
    assert_eq!(p.counts().pending, 2);
    let work = JobSpec::new("a", "alice", &["sleep", "5"]);
    assert!(p.claim(&work, "w0").unwrap().is_none());
    r.at(105);
    r.mw.poll_all();
    p.tick();
    assert_eq!(p.counts().warm, 2);
    let first = p.claim(&work, "w1").unwrap().unwrap();
    assert_eq!(first.start_at, r.mw.now() + SimDuration::from_millis(500));
    assert_eq!(first.slot.claimed_by.as_deref(), Some("w1"));
    // the lowest job id warmed first among equals
    let ids: Vec<_> = p.slots().iter().map(|s| s.pilot_job.job_id).collect();
    assert_eq!(first.slot.pilot_job.job_id, ids[0]);
    // claiming tops the pool back up
    assert_eq!(p.counts().pending, 1);
}

#[test]
fn counts_are_conserved_and_bounded() {
    let r = rig(&[pbs("a", QueueModel::exponential(60))], Default::default(), None);
    let p = PilotPool::configure(pool(2, 3, 600), r.mw.clone()).unwrap();
    let work = JobSpec::new("a", "alice", &["sleep", "5"]);
    let mut claimed = Vec::new();
    for t in (5..5000).step_by(5) {
        r.at(t);
        r.mw.poll_all();
        p.tick();
        if t % 300 == 0 {
            if let Some(c) = p.claim(&work, "w").unwrap() {
                claimed.push(c.slot.pilot_job.job_id);
            }
        }
        if t % 300 == 100 {
            if let Some(id) = claimed.pop() {
                // a pilot past its walltime has already been retired
                match p.release(id) {
                    Ok(()) | Err(PoolError::NotClaimed(_)) => {}
                    Err(e) => panic!("{e}"),
                }
            }
        }
        let c = p.counts();
        assert_eq!(c.pending + c.warm + c.claimed + c.expired, c.submitted);
        assert!(c.pending + c.warm + c.claimed <= 3, "{c:?}");
    }
    assert!(p.counts().expired > 0);
}

#[test]
fn released_pilots_are_cancelled() {
    let r = rig(&[pbs("a", QueueModel::fixed(0))], Default::default(), None);
    let p = PilotPool::configure(pool(1, 1, 10_000), r.mw.clone()).unwrap();
    r.at(5);
    r.mw.poll_all();
    let c = p.claim(&JobSpec::new("a", "alice", &["x"]), "w").unwrap().unwrap();
    let id = c.slot.pilot_job.job_id;
    assert_eq!(p.release(id), Ok(()));
    assert_eq!(p.release(id), Err(PoolError::NotClaimed(id)));
    r.at(10);
    r.mw.poll_all();
    assert_eq!(r.mw.status(id).unwrap().state, JobState::Canceled);
    assert_eq!(p.slot(id).unwrap().state, SlotState::Expired);
}

#[test]
fn walltime_retires_warm_slots() {
    let r = rig(&[pbs("a", QueueModel::fixed(0))], Default::default(), None);
    let p = PilotPool::configure(pool(1, 2, 100), r.mw.clone()).unwrap();
    r.at(5);
    r.mw.poll_all();
    p.tick();
    assert_eq!(p.counts().warm, 1);
    r.at(110);
    r.mw.poll_all();
    let report = p.tick();
    assert_eq!(report.expired.len(), 1);
    assert_eq!(report.submitted.len(), 1);
}

#[test]
fn policy_and_placement_errors() {
    let r = rig(&[pbs("a", QueueModel::fixed(0))], Default::default(), None);
    assert!(matches!(PilotPool::configure(pool(3, 2, 10), r.mw.clone()), Err(PoolError::InvalidPolicy(_))));
    let mut other = pool(1, 1, 10);
    other.resource = "nowhere".into();
    assert!(matches!(PilotPool::configure(other, r.mw.clone()), Err(PoolError::Middleware(_))));
    let p = PilotPool::configure(pool(1, 1, 10), r.mw.clone()).unwrap();
    let mut wide = JobSpec::new("a", "alice", &["x"]);
    wide.node_count = 2;
    assert!(matches!(p.claim(&wide, "w"), Err(PoolError::DoesNotFit { .. })));
    assert!(matches!(p.claim(&JobSpec::new("b", "alice", &["x"]), "w"), Err(PoolError::ResourceMismatch { .. })));
}
