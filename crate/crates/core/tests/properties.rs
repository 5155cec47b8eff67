mod common;

use std::sync::Arc;

use common::lru::{Op, Oracle, Outcome};
use proptest::prelude::*;
use talescale::dms::{CacheConfig, DatasetCatalog, DmsCache, ExternalDataRef, SimRepository, TransferLog};
use talescale::lrm::{is_legal, JobState, JobStatus};
use talescale::planner::{
    plan_placement, DatasetAccess, ExecutionModel, LocalDataset, LrmKind, Objective, ResourceDescriptor, ResourceKind,
    WorkloadRequirements,
};
use talescale::sim::{QueueModel, WaitDistribution};
use talescale::tale::{export_tale_from, import_tale_at};
use talescale::{Digest, SimTime};

const STATES: [JobState; 7] = [
    JobState::Created,
    JobState::Submitted,
    JobState::Queued,
    JobState::Running,
    JobState::Completed,
    JobState::Failed,
    JobState::Canceled,
];

/// The lifecycle written out as a table, independent of the library's.
fn legal_oracle(from: JobState, to: JobState) -> bool {
    use JobState::*;
    matches!(
        (from, to),
        (Created, Submitted)
            | (Submitted, Queued)
            | (Submitted, Failed)
            | (Queued, Running)
            | (Queued, Canceled)
            | (Running, Completed)
            | (Running, Failed)
            | (Running, Canceled)
    )
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        6 => (0usize..8).prop_map(Op::Open),
        1 => (0usize..8).prop_map(Op::Pin),
        1 => (0usize..8).prop_map(Op::Unpin),
        1 => (0u64..400).prop_map(Op::Evict),
    ]
}

fn resource() -> impl Strategy<Value = ResourceDescriptor> {
    (0u8..3, any::<bool>(), any::<bool>(), any::<bool>(), 1u32..16, any::<bool>()).prop_map(|(k, batch, mpi, incoming, nodes, posix)| {
        let (kind, lrm) = match k {
            0 => (ResourceKind::WtCluster, LrmKind::None),
            1 => (ResourceKind::HpcCluster, if batch { LrmKind::Batch } else { LrmKind::None }),
            _ => (ResourceKind::Cloud, LrmKind::None),
        };
        let mut r = ResourceDescriptor::new(format!("r{k}{nodes}{mpi}"), kind, lrm, nodes);
        r.mpi_capable = mpi && kind == ResourceKind::HpcCluster;
        r.allows_incoming_connections = incoming || kind == ResourceKind::WtCluster;
        if posix {
            r.local_datasets = vec![LocalDataset { uri: "doi:d".into(), access: DatasetAccess::Posix }];
        }
        r
    })
}

fn inventory() -> impl Strategy<Value = Vec<ResourceDescriptor>> {
    prop::collection::vec(resource(), 1..5).prop_map(|mut v| {
        for (i, r) in v.iter_mut().enumerate() {
            r.name = format!("{}-{i}", r.name);
        }
        v
    })
}

fn requirements() -> impl Strategy<Value = WorkloadRequirements> {
    (any::<bool>(), any::<bool>(), 1u32..8).prop_map(|(hpc, mpi, nodes)| WorkloadRequirements {
        needs_hpc: hpc || mpi,
        needs_mpi: mpi,
        min_nodes: nodes,
        ..WorkloadRequirements::default()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lifecycle_accepts_exactly_the_legal_steps(path in prop::collection::vec(0usize..7, 1..12)) {
        let mut st = JobStatus::created(SimTime::ZERO);
        for (i, &k) in path.iter().enumerate() {
            let to = STATES[k];
            let from = st.state;
            prop_assert_eq!(is_legal(from, to), legal_oracle(from, to));
            let ok = st.advance(to, SimTime::from_secs(i as u64)).is_ok();
            prop_assert_eq!(ok, legal_oracle(from, to));
            prop_assert_eq!(st.state, if ok { to } else { from });
        }
        let times: Vec<_> = st.history.iter().map(|h| h.1).collect();
        prop_assert!(times.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn cache_matches_lru_oracle(
        sizes in prop::collection::vec(1u64..150, 8),
        capacity in 100u64..500,
        ops in prop::collection::vec(op(), 1..60),
    ) {
        let refs: Vec<_> = sizes.iter().enumerate().map(|(i, &s)| ExternalDataRef::new(format!("f{i}"), s, Digest::of(&[i as u8]))).collect();
        let log = Arc::new(TransferLog::new());
        let cache = DmsCache::new(
            CacheConfig { capacity_bytes: capacity, ..CacheConfig::default() },
            DatasetCatalog::from_refs(refs).unwrap(),
            Arc::new(SimRepository::new()),
            log.clone(),
        );
        let mut oracle = Oracle::new(capacity, sizes);
        for (t, op) in ops.into_iter().enumerate() {
            let now = SimTime::from_secs(t as u64);
            let real = match op {
                Op::Open(i) => cache.open(&format!("f{i}"), now).map(|_| ()),
                Op::Pin(i) => cache.pin(&format!("f{i}")),
                Op::Unpin(i) => cache.unpin(&format!("f{i}")),
                Op::Evict(b) => cache.evict(b).map(|_| ()),
            };
            let expected = oracle.apply(op);
            prop_assert_eq!(real.is_ok(), expected == Outcome::Ok, "{:?}", op);
            let mut resident: Vec<usize> = cache.resident_uris().iter().map(|u| u[1..].parse().unwrap()).collect();
            resident.sort();
            prop_assert_eq!(resident, oracle.resident());
            prop_assert!(cache.used_bytes() <= capacity);
        }
        prop_assert_eq!(log.len(), oracle.transfers);
    }

    #[test]
    fn archives_round_trip(seed in 0u64..10_000) {
        let (tale, ws) = common::tales::generate(seed);
        let first = export_tale_from(&tale, &ws).unwrap();
        let imported = import_tale_at(&first, 42).unwrap();
        let second = export_tale_from(&imported.tale, &imported.workspace).unwrap();
        prop_assert_eq!(first, second);
        prop_assert_eq!(imported.tale.code_refs, tale.code_refs);
        prop_assert_eq!(imported.tale.data_refs, tale.data_refs);
    }

    #[test]
    fn plans_are_deterministic_and_proxy_follows_policy(inv in inventory(), req in requirements(), data in any::<bool>()) {
        let objective = if data { Objective::MinDataMovement } else { Objective::MinTimeToFrontend };
        let a = plan_placement(&req, &inv, objective);
        let b = plan_placement(&req, &inv, objective);
        prop_assert_eq!(&a, &b);
        if let Ok(plan) = a {
            let frontend = inv.iter().find(|r| r.name == plan.frontend_resource).unwrap();
            prop_assert_eq!(plan.proxy_required, !frontend.allows_incoming_connections);
            prop_assert!(plan.model.can_host_frontend(frontend));
            prop_assert_eq!(plan.workload_resources.is_empty(), !req.needs_hpc);
            if req.needs_mpi {
                for w in &plan.workload_resources {
                    prop_assert!(inv.iter().find(|r| &r.name == w).unwrap().mpi_capable);
                }
            }
        }
    }

    #[test]
    fn adding_a_resource_never_removes_a_feasible_model(inv in inventory(), extra in resource(), req in requirements()) {
        let before = match talescale::planner::enumerate_feasible_models(&req, &inv) { Ok(b) => b, Err(e) => panic!("{e:?}") };
        let mut more = inv.clone();
        let mut extra = extra;
        extra.name = "extra".into();
        more.push(extra);
        let after = talescale::planner::enumerate_feasible_models(&req, &more).unwrap();
        for (b, a) in before.iter().zip(&after) {
            prop_assert!(!b.feasible || a.feasible, "{:?} lost feasibility", b.model);
        }
        prop_assert_eq!(after.len(), ExecutionModel::ALL.len());
    }

    #[test]
    fn queue_waits_respect_their_family(seed in any::<u64>(), mean in 1u64..10_000, submit in 0u64..100_000) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let at = SimTime::from_secs(submit);
        let mut q = QueueModel::new(WaitDistribution::Uniform { min: talescale::SimDuration::from_secs(mean), max: talescale::SimDuration::from_secs(2 * mean) });
        let w = q.sample_queue_wait(&mut rng, at).as_secs_f64();
        prop_assert!(w >= mean as f64 && w <= 2.0 * mean as f64);
        q.reservation = true;
        prop_assert!(q.sample_queue_wait(&mut rng, at).is_zero());
    }
}
