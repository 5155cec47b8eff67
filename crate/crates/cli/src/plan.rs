use std::path::PathBuf;

use serde_json::{json, Value};
use talescale::planner::{PlacementPlan, PlanError, Planner, PlannerConfig, ResourceDescriptor, WorkloadRequirements};
use talescale::sim::parse_config;

use crate::output::{parse_json, read, user, user_with, Out};

#[derive(clap::Args, Debug)]
pub struct PlanArgs {
    /// JSON list of resources, or a simulation config whose resources,
    /// queues, datasets and frontend timings are used.
    #[arg(long)]
    pub inventory: PathBuf,
    /// Workload requirements (JSON). Defaults to a frontend-only workload.
    #[arg(long)]
    pub requirements: Option<PathBuf>,
    /// `min_time_to_frontend` (`time`) or `min_data_movement` (`data`).
    #[arg(long, default_value = "min_time_to_frontend")]
    pub objective: String,
}

/// Planner and resources described by an inventory file.
pub fn load_inventory(path: &std::path::Path) -> anyhow::Result<(PlannerConfig, Vec<ResourceDescriptor>)> {
    let bytes = read(path)?;
    let value: Value = serde_json::from_slice(&bytes).map_err(|e| user(format!("{}: {e}", path.display())))?;
    if value.is_array() {
        let resources = serde_json::from_value(value).map_err(|e| user(format!("{}: {e}", path.display())))?;
        return Ok((PlannerConfig::default(), resources));
    }
    let world = parse_config(&String::from_utf8_lossy(&bytes)).map_err(|e| user(format!("{}: {e}", path.display())))?;
    Ok((world.planner_config(), world.config.resources.clone()))
}

pub fn load_requirements(path: Option<&std::path::Path>) -> anyhow::Result<WorkloadRequirements> {
    match path {
        Some(p) => parse_json(p),
        None => Ok(WorkloadRequirements::default()),
    }
}

pub fn run(args: PlanArgs, out: &Out) -> anyhow::Result<()> {
    let (config, inventory) = load_inventory(&args.inventory)?;
    let req = load_requirements(args.requirements.as_deref())?;
    let objective = args.objective.parse().map_err(user)?;
    match Planner::new(config).plan_placement(&req, &inventory, objective) {
        Ok(plan) => out.emit(&plan, || render(&plan)),
        Err(PlanError::Infeasible(rows)) => {
            if !out.json() {
                println!("no execution model is feasible:");
                for r in &rows {
                    println!("  {}: {}", r.model.code(), r.reason);
                }
            }
            Err(user_with(PlanError::Infeasible(rows.clone()), json!({"infeasible": rows})))
        }
        Err(e) => Err(user(e)),
    }
}

fn render(plan: &PlacementPlan) -> String {
    let mut s = format!("model      {} ({})\n", plan.model.code(), plan.model.name());
    s += &format!("frontend   {}\n", plan.frontend_resource);
    if !plan.workload_resources.is_empty() {
        s += &format!("workload   {}\n", plan.workload_resources.join(", "));
    }
    s += &format!("proxy      {}\n", if plan.proxy_required { "required" } else { "not required" });
    s += &format!("ttf        {} (estimated)\n", plan.estimated_time_to_frontend);
    s += &format!("data moved {} bytes\n", plan.data_movement_bytes);
    for a in &plan.staging_actions {
        s += &format!("staging    {:?} {} on {}\n", a.action, a.uri, a.resource);
    }
    for r in &plan.reasons {
        s += &format!("  - {r}\n");
    }
    s
}
