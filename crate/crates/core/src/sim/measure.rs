//! Time-to-frontend measurements across execution models and seeds.

use serde::{Deserialize, Serialize};

use super::config::{Step, World};
use super::engine::{Engine, RunOutput};
use super::metrics::median;
use super::report::{Report, ReportRow};
use crate::lrm::LrmError;
use crate::planner::{enumerate_feasible_models, ExecutionModel, Objective, PlanError, WorkloadRequirements};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureOptions {
    /// How long to wait for a frontend after the launch.
    pub horizon: SimDuration,
    /// Time before the launch, for pools to warm up.
    pub warmup: SimDuration,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        MeasureOptions { horizon: SimDuration::from_secs(7 * 86_400), warmup: SimDuration::ZERO }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MeasureError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Setup(#[from] LrmError),
}

/// Launches one frontend with `model` forced and returns the finished
/// engine. The world's own scenario is replaced.
pub fn launch_once(
    world: &World,
    req: &WorkloadRequirements,
    model: ExecutionModel,
    seed: u64,
    opts: MeasureOptions,
) -> Result<Engine, LrmError> {
    let mut w = world.clone();
    let launch = SimTime::ZERO + opts.warmup;
    w.config.scenario = vec![Step::LaunchFrontend {
        at: launch,
        tale: "measured".into(),
        requirements: req.clone(),
        objective: Objective::MinTimeToFrontend,
        model: Some(model),
        duration: SimDuration::from_secs(60),
        use_pool: true,
    }];
    let until = launch + opts.horizon;
    w.config.horizon = Some(until);
    let mut engine = Engine::new(w, seed)?;
    engine.run_while(until, |e| e.trace().of_kind("frontend_ready").next().is_some() || e.trace().of_kind("frontend_failed").next().is_some());
    Ok(engine)
}

/// One row per feasible model and seed. A frontend that never came up
/// within the horizon has no time.
pub fn measure_models(
    world: &World,
    req: &WorkloadRequirements,
    seeds: &[u64],
    opts: MeasureOptions,
) -> Result<Report, MeasureError> {
    let table = enumerate_feasible_models(req, &world.config.resources)?;
    let mut rows = Vec::new();
    for f in table.iter().filter(|f| f.feasible) {
        for &seed in seeds {
            let engine = launch_once(world, req, f.model, seed, opts)?;
            let ttf = engine.trace().of_kind("frontend_ready").next().and_then(|e| e.f64("ttf_s"));
            let c = engine.middleware().counters();
            rows.push(ReportRow {
                model: f.model.code().to_string(),
                seed,
                time_to_frontend_s: ttf,
                queries: c.backend_queries,
                handshakes: c.handshakes,
                transfers: engine.data().transfer_log().len() as u64,
            });
        }
    }
    Ok(Report { rows })
}

/// Median time to frontend of `model` over the rows that have one.
pub fn median_ttf(report: &Report, model: ExecutionModel) -> Option<f64> {
    let v: Vec<f64> = report.rows.iter().filter(|r| r.model == model.code()).filter_map(|r| r.time_to_frontend_s).collect();
    median(&v)
}

/// Report rows for a scenario run: one per frontend launch, in launch
/// order, each carrying the run's totals. A run without launches gives an
/// empty report.
pub fn run_report(out: &RunOutput, seed: u64) -> Report {
    let m = &out.metrics;
    let rows = out
        .trace
        .of_kind("frontend_requested")
        .map(|req| {
            let tale = req.str("tale");
            let ttf = out
                .trace
                .of_kind("frontend_ready")
                .find(|r| r.str("tale") == tale && r.t >= req.t)
                .and_then(|r| r.f64("ttf_s"));
            ReportRow {
                model: req.str("model").unwrap_or("?").to_string(),
                seed,
                time_to_frontend_s: ttf,
                queries: m.backend_queries as u64,
                handshakes: m.handshakes as u64,
                transfers: m.transfers as u64,
            }
        })
        .collect();
    Report { rows }
}
