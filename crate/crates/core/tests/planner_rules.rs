//! Feasibility over every small inventory, checked against a rule table
//! written out independently of the planner.

use std::collections::BTreeSet;

use talescale::planner::{
    enumerate_feasible_models, plan_placement, ExecutionModel, LrmKind, Objective, ResourceDescriptor, ResourceKind,
    WorkloadRequirements,
};

use ExecutionModel::*;

fn grid() -> Vec<ResourceDescriptor> {
    let mut out = vec![ResourceDescriptor::wt("wt"), ResourceDescriptor::cloud("cloud")];
    let mut node = ResourceDescriptor::new("node", ResourceKind::HpcCluster, LrmKind::None, 1);
    node.allows_incoming_connections = false;
    out.push(node);
    for (name, nodes, mpi) in [("b1", 1, false), ("b4", 4, false), ("m4", 4, true)] {
        let mut r = ResourceDescriptor::hpc_batch(name, nodes);
        r.mpi_capable = mpi;
        out.push(r);
    }
    out
}

fn requirements() -> Vec<WorkloadRequirements> {
    let mut out = Vec::new();
    for min_nodes in [1, 4] {
        out.push(WorkloadRequirements { min_nodes, ..Default::default() });
        out.push(WorkloadRequirements::hpc(min_nodes));
        out.push(WorkloadRequirements::mpi(min_nodes));
    }
    out
}

fn oracle(req: &WorkloadRequirements, inv: &[ResourceDescriptor]) -> BTreeSet<ExecutionModel> {
    let any = |f: &dyn Fn(&ResourceDescriptor) -> bool| inv.iter().any(f);
    let serial_single = !req.needs_mpi && req.min_nodes == 1;
    let wt = any(&|r| r.kind == ResourceKind::WtCluster);
    let bare_node = any(&|r| r.kind == ResourceKind::HpcCluster && r.lrm == LrmKind::None);
    let batch = |r: &ResourceDescriptor| r.kind == ResourceKind::HpcCluster && r.lrm == LrmKind::Batch && r.node_count >= req.min_nodes;
    let worker = any(&|r| batch(r) && (!req.needs_mpi || r.mpi_capable));

    let mut out = BTreeSet::new();
    if serial_single && wt {
        out.insert(M1WtCluster);
    }
    if serial_single && bare_node {
        out.insert(M2HpcNode);
    }
    if !req.needs_mpi && any(&batch) {
        out.insert(M3HpcNodeLocalLrm);
    }
    if any(&|r| batch(r) && r.mpi_capable) {
        out.insert(M4HpcMpi);
    }
    if wt && worker {
        out.insert(M5WtFrontendRemoteLrm);
    }
    if worker {
        out.insert(M6DecoupledRemoteLrm);
    }
    out
}

#[test]
fn feasibility_matches_the_rule_table_on_every_small_inventory() {
    let grid = grid();
    let mut checked = 0;
    for mask in 1u32..(1 << grid.len()) {
        let inv: Vec<_> = grid.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, r)| r.clone()).collect();
        if inv.len() > 3 {
            continue;
        }
        for req in requirements() {
            let rows = enumerate_feasible_models(&req, &inv).unwrap();
            assert_eq!(rows.iter().map(|f| f.model).collect::<Vec<_>>(), ExecutionModel::ALL);
            let got: BTreeSet<_> = rows.iter().filter(|f| f.feasible).map(|f| f.model).collect();
            let names: Vec<_> = inv.iter().map(|r| r.name.as_str()).collect();
            assert_eq!(got, oracle(&req, &inv), "{names:?} {req:?}");
            assert!(rows.iter().all(|f| !f.reason.is_empty()));

            match plan_placement(&req, &inv, Objective::MinTimeToFrontend) {
                Ok(plan) => assert!(got.contains(&plan.model)),
                Err(_) => assert!(got.is_empty(), "{names:?} {req:?}"),
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 41 * 6);
}

#[test]
fn hpc_workload_on_wt_and_batch() {
    let inv = [ResourceDescriptor::wt("wt"), ResourceDescriptor::hpc_batch("hpc", 8)];
    let got: Vec<_> = enumerate_feasible_models(&WorkloadRequirements::hpc(1), &inv)
        .unwrap()
        .into_iter()
        .filter(|f| f.feasible)
        .map(|f| f.model)
        .collect();
    assert_eq!(got, [M1WtCluster, M3HpcNodeLocalLrm, M5WtFrontendRemoteLrm, M6DecoupledRemoteLrm]);
}

#[test]
fn frontend_on_closed_node_needs_the_proxy() {
    let mut hpc = ResourceDescriptor::hpc_batch("hpc", 8);
    hpc.mpi_capable = true;
    let plan = plan_placement(&WorkloadRequirements::mpi(4), &[ResourceDescriptor::wt("wt"), hpc], Objective::MinTimeToFrontend)
        .unwrap();
    assert_eq!(plan.model, M4HpcMpi);
    assert_eq!(plan.frontend_resource, "hpc");
    assert!(plan.proxy_required);
}
