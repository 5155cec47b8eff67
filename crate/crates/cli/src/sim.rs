use std::path::{Path, PathBuf};

use clap::Subcommand;
use serde_json::json;
use talescale::sim::{
    emit_report, load_config, measure_models, run_report, run_scenario, MeasureOptions, Report, ReportFormat, World,
};
use talescale::{SimDuration, SimTime};

use crate::output::{raw, user, write, Out};
use crate::plan::load_requirements;
use crate::ConfigArg;

#[derive(Subcommand, Debug)]
pub enum SimCmd {
    /// Run the config's scenario once.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// End of the run in seconds, overriding the config.
        #[arg(long)]
        horizon: Option<f64>,
        /// Where to write the trace (ndjson).
        #[arg(long, default_value = "trace.ndjson")]
        trace: PathBuf,
        /// Print the frontend report in this format: table, json or csv.
        #[arg(long)]
        report: Option<String>,
        /// Write the report here instead of standard output.
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Time to frontend of every feasible model over many seeds.
    Measure {
        #[command(flatten)]
        config: ConfigArg,
        /// Workload requirements (JSON).
        #[arg(long)]
        requirements: Option<PathBuf>,
        /// Number of seeds, counted up from `--first-seed`.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        /// Seconds to wait for each frontend.
        #[arg(long)]
        horizon: Option<f64>,
        /// Seconds of simulated time before the launch, for pools to warm.
        #[arg(long, default_value_t = 0.0)]
        warmup: f64,
        /// table, json or csv; json under `--format json`, else table.
        #[arg(long)]
        report: Option<String>,
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
}

pub fn world(config: &ConfigArg) -> anyhow::Result<(PathBuf, World)> {
    let path = config.config.clone().ok_or_else(|| user("no config given; pass --config or set TALESCALE_CONFIG"))?;
    let w = load_config(&path).map_err(user)?;
    Ok((path, w))
}

fn seconds(flag: &str, v: f64) -> anyhow::Result<SimDuration> {
    if v.is_finite() && v >= 0.0 {
        Ok(SimDuration::from_secs_f64(v))
    } else {
        Err(user(format!("--{flag} must be a non-negative number of seconds")))
    }
}

fn report_format(s: &str) -> anyhow::Result<ReportFormat> {
    s.parse().map_err(user)
}

fn deliver(report: &Report, format: ReportFormat, to: Option<&Path>) -> anyhow::Result<()> {
    let text = emit_report(report, format);
    match to {
        Some(p) => write(p, text.as_bytes()),
        None => raw(&text),
    }
}

pub fn run(cmd: SimCmd, out: &Out) -> anyhow::Result<()> {
    match cmd {
        SimCmd::Run { config, seed, horizon, trace, report, report_out } => {
            let format = report.as_deref().map(report_format).transpose()?;
            let (_, mut w) = world(&config)?;
            if let Some(h) = horizon {
                w.config.horizon = Some(SimTime::ZERO + seconds("horizon", h)?);
            }
            let result = run_scenario(w, seed).map_err(user)?;
            write(&trace, result.trace.to_ndjson().as_bytes())?;
            if let Some(format) = format {
                return deliver(&run_report(&result, seed), format, report_out.as_deref());
            }
            let m = &result.metrics;
            let v = json!({"seed": seed, "trace": trace, "events": result.trace.events.len(), "metrics": m});
            out.emit(&v, || {
                let mut s = format!("seed {seed}, {} trace events written to {}\n", result.trace.events.len(), trace.display());
                s += &format!(
                    "jobs       {} submitted, {} completed, {} failed, {} canceled\n",
                    m.jobs_submitted, m.jobs_completed, m.jobs_failed, m.jobs_canceled
                );
                s += &format!("transport  {} calls, {} batch queries, {} handshakes\n", m.transport_calls, m.backend_queries, m.handshakes);
                s += &format!("data       {} transfers, {} bytes\n", m.transfers, m.transfer_bytes);
                s += &format!("frontends  {} ready, {} failed\n", m.frontends_ready, m.frontends_failed);
                s += &format!("routes     {} ok, {} failed\n", m.routes_ok, m.routes_failed);
                s += &format!("errors     {}, illegal transitions {}\n", m.errors, m.illegal_transitions);
                s
            })
        }
        SimCmd::Measure { config, requirements, seeds, first_seed, horizon, warmup, report, report_out } => {
            let format = match report {
                Some(r) => report_format(&r)?,
                None if out.json() => ReportFormat::Json,
                None => ReportFormat::Table,
            };
            let (_, w) = world(&config)?;
            let req = load_requirements(requirements.as_deref())?;
            let mut opts = MeasureOptions { warmup: seconds("warmup", warmup)?, ..MeasureOptions::default() };
            if let Some(h) = horizon {
                opts.horizon = seconds("horizon", h)?;
            }
            let seed_list: Vec<u64> = (first_seed..first_seed.saturating_add(seeds)).collect();
            let r = measure_models(&w, &req, &seed_list, opts).map_err(user)?;
            deliver(&r, format, report_out.as_deref())
        }
    }
}
