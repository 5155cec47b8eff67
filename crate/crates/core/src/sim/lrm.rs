//! A simulated batch system that answers PBS- or Slurm-style command lines.
//!
//! Job state is a pure function of the submission record and the query
//! time, so the backend needs no event loop of its own.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::queue::{QueueModel, StartDecision};
use crate::lrm::PBS_DELETED_EXIT;
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    Pbs,
    Slurm,
}

impl Flavor {
    pub fn from_dialect(name: &str) -> Option<Flavor> {
        match name {
            "sim-pbs" | "pbs" => Some(Flavor::Pbs),
            "sim-slurm" | "slurm" => Some(Flavor::Slurm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimJob {
    pub native_id: String,
    pub name: String,
    pub nodes: u32,
    pub submitted: SimTime,
    pub runtime: SimDuration,
    pub exit_code: i32,
    pub decision: StartDecision,
    pub canceled_at: Option<SimTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Queued { held: bool },
    Running { since: SimTime },
    Exited { code: i32, started: SimTime, ended: SimTime },
    Canceled { started: Option<SimTime>, at: SimTime },
}

impl Phase {
    pub fn is_finished(self) -> bool {
        matches!(self, Phase::Exited { .. } | Phase::Canceled { .. })
    }
}

/// Runtime and exit code encoded in a workload command.
///
/// `sleep N`, `pilot N` and `frontend N` run N seconds and succeed;
/// `fail N [code]` runs N seconds and exits with `code` (default 1).
/// Anything else runs for the queue's default runtime.
pub fn workload_behaviour(argv: &[String], default_runtime: SimDuration) -> (SimDuration, i32) {
    let secs = |i: usize| argv.get(i).and_then(|s| s.parse::<f64>().ok()).filter(|s| *s >= 0.0).map(SimDuration::from_secs_f64);
    match argv.first().map(String::as_str) {
        Some("sleep" | "pilot" | "frontend") => (secs(1).unwrap_or(default_runtime), 0),
        Some("fail") => (secs(1).unwrap_or(default_runtime), argv.get(2).and_then(|c| c.parse().ok()).unwrap_or(1)),
        _ => (default_runtime, 0),
    }
}

#[derive(Debug)]
pub struct SimLrm {
    resource: String,
    flavor: Flavor,
    queue: QueueModel,
    node_count: u32,
    rng: ChaCha8Rng,
    jobs: BTreeMap<String, SimJob>,
    next: u64,
}

struct Submission {
    name: String,
    nodes: u32,
    argv: Vec<String>,
}

impl SimLrm {
    pub fn new(resource: impl Into<String>, flavor: Flavor, queue: QueueModel, node_count: u32, seed: u64) -> Self {
        SimLrm {
            resource: resource.into(),
            flavor,
            queue,
            node_count,
            rng: ChaCha8Rng::seed_from_u64(seed),
            jobs: BTreeMap::new(),
            next: 1,
        }
    }

    pub fn queue(&self) -> &QueueModel {
        &self.queue
    }

    pub fn job(&self, native_id: &str) -> Option<&SimJob> {
        self.jobs.get(native_id)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &SimJob> {
        self.jobs.values()
    }

    pub fn phase(&self, job: &SimJob, t: SimTime) -> Phase {
        let held = self.queue.window_at(t).is_some();
        match job.decision {
            StartDecision::PurgedAt(p) => match job.canceled_at {
                Some(c) if c <= t && c < p => Phase::Canceled { started: None, at: c },
                _ if t >= p => Phase::Canceled { started: None, at: p },
                _ => Phase::Queued { held },
            },
            StartDecision::StartAt(s) => {
                let end = s + job.runtime;
                match job.canceled_at {
                    Some(c) if c <= t && c < s => return Phase::Canceled { started: None, at: c },
                    Some(c) if c <= t && c < end => return Phase::Canceled { started: Some(s), at: c },
                    _ => {}
                }
                if t < s {
                    Phase::Queued { held }
                } else if t < end {
                    Phase::Running { since: s }
                } else {
                    Phase::Exited { code: job.exit_code, started: s, ended: end }
                }
            }
        }
    }

    /// Runs one command line at time `at`; `Err` carries the error text.
    pub fn execute(&mut self, command: &str, at: SimTime) -> Result<String, String> {
        let argv = shell_words::split(command).map_err(|e| format!("parse error: {e}"))?;
        let Some(program) = argv.first() else { return Err("empty command".into()) };
        match (self.flavor, program.as_str()) {
            (Flavor::Pbs, "qsub") => {
                let sub = parse_qsub(&argv[1..])?;
                let seq = self.enqueue(sub, at)?;
                Ok(format!("{seq}.{}\n", self.resource))
            }
            (Flavor::Pbs, "qstat") => Ok(self.qstat(&argv[1..], at)),
            (Flavor::Pbs, "qdel") => self.cancel_all(&argv[1..], at),
            (Flavor::Slurm, "sbatch") => {
                let sub = parse_sbatch(&argv[1..])?;
                let seq = self.enqueue(sub, at)?;
                Ok(format!("{seq}\n"))
            }
            (Flavor::Slurm, "sacct") => Ok(self.sacct(&argv[1..], at)),
            (Flavor::Slurm, "scancel") => self.cancel_all(&argv[1..], at),
            (_, other) => Err(format!("{other}: command not found")),
        }
    }

    fn enqueue(&mut self, sub: Submission, at: SimTime) -> Result<u64, String> {
        if sub.nodes == 0 || sub.nodes > self.node_count {
            return Err(format!("requested {} nodes; {} available", sub.nodes, self.node_count));
        }
        let seq = self.next;
        self.next += 1;
        let native_id = match self.flavor {
            Flavor::Pbs => format!("{seq}.{}", self.resource),
            Flavor::Slurm => seq.to_string(),
        };
        let wait = self.queue.sample_queue_wait(&mut self.rng, at);
        let (runtime, exit_code) = workload_behaviour(&sub.argv, self.queue.default_runtime);
        let decision = self.queue.start_decision(at, wait);
        self.jobs.insert(
            native_id.clone(),
            SimJob { native_id, name: sub.name, nodes: sub.nodes, submitted: at, runtime, exit_code, decision, canceled_at: None },
        );
        Ok(seq)
    }

    fn cancel_all(&mut self, ids: &[String], at: SimTime) -> Result<String, String> {
        let mut out = String::new();
        for id in ids {
            let Some(job) = self.jobs.get(id) else {
                return Err(format!("unknown job id {id}"));
            };
            if self.phase(job, at).is_finished() {
                out.push_str(&format!("{id}: job has finished\n"));
            } else {
                self.jobs.get_mut(id).expect("present").canceled_at = Some(at);
            }
        }
        Ok(out)
    }

    fn qstat(&self, args: &[String], at: SimTime) -> String {
        let mut out = String::new();
        let mut i = 0;
        while i < args.len() {
            match args[i].as_str() {
                "-x" => i += 1,
                "-F" => i += 2,
                id => {
                    i += 1;
                    let Some(job) = self.jobs.get(id) else { continue };
                    let mut fields = vec![format!("Job_Id={id}")];
                    let q = format!("qtime={}", job.submitted.to_decimal());
                    match self.phase(job, at) {
                        Phase::Queued { held } => {
                            fields.push(format!("job_state={}", if held { "H" } else { "Q" }));
                            fields.push(q);
                        }
                        Phase::Running { since } => {
                            fields.extend(["job_state=R".into(), q, format!("stime={}", since.to_decimal())]);
                        }
                        Phase::Exited { code, started, ended } => fields.extend([
                            "job_state=F".into(),
                            format!("Exit_status={code}"),
                            q,
                            format!("stime={}", started.to_decimal()),
                            format!("obittime={}", ended.to_decimal()),
                        ]),
                        Phase::Canceled { started: Some(s), at } => fields.extend([
                            "job_state=F".into(),
                            format!("Exit_status={PBS_DELETED_EXIT}"),
                            q,
                            format!("stime={}", s.to_decimal()),
                            format!("obittime={}", at.to_decimal()),
                        ]),
                        Phase::Canceled { started: None, at } => {
                            fields.extend(["job_state=F".into(), q, format!("obittime={}", at.to_decimal())]);
                        }
                    }
                    out.push_str(&fields.join("|"));
                    out.push('\n');
                }
            }
        }
        out
    }

    fn sacct(&self, args: &[String], at: SimTime) -> String {
        let ids = args.iter().position(|a| a == "-j").and_then(|i| args.get(i + 1)).cloned().unwrap_or_default();
        let mut out = String::new();
        for id in ids.split(',').filter(|s| !s.is_empty()) {
            let Some(job) = self.jobs.get(id) else { continue };
            let unknown = || "Unknown".to_string();
            let (state, exit, start, end) = match self.phase(job, at) {
                Phase::Queued { held } => (if held { "REQUEUE_HOLD" } else { "PENDING" }.to_string(), "0:0".into(), unknown(), unknown()),
                Phase::Running { since } => ("RUNNING".into(), "0:0".into(), since.to_decimal(), unknown()),
                Phase::Exited { code, started, ended } => (
                    if code == 0 { "COMPLETED" } else { "FAILED" }.into(),
                    format!("{code}:0"),
                    started.to_decimal(),
                    ended.to_decimal(),
                ),
                Phase::Canceled { started, at } => (
                    "CANCELLED by 0".into(),
                    "0:15".into(),
                    started.map(SimTime::to_decimal).unwrap_or_else(unknown),
                    at.to_decimal(),
                ),
            };
            out.push_str(&format!("{id}|{state}|{exit}|{}|{start}|{end}\n", job.submitted.to_decimal()));
        }
        out
    }
}

fn parse_qsub(args: &[String]) -> Result<Submission, String> {
    let mut sub = Submission { name: String::new(), nodes: 1, argv: Vec::new() };
    let mut i = 0;
    while i < args.len() {
        let value = || args.get(i + 1).cloned().ok_or_else(|| format!("qsub: option {} requires an argument", args[i]));
        match args[i].as_str() {
            "-N" => sub.name = value()?,
            "-l" => {
                let spec = value()?;
                for part in spec.split(':') {
                    if let Some(n) = part.strip_prefix("select=") {
                        sub.nodes = n.parse().map_err(|_| format!("qsub: bad select {n}"))?;
                    }
                }
            }
            "-v" => {
                value()?;
            }
            "--" => {
                sub.argv = args[i + 1..].to_vec();
                return Ok(sub);
            }
            other => return Err(format!("qsub: illegal option {other}")),
        }
        i += 2;
    }
    Err("qsub: no command given".into())
}

fn parse_sbatch(args: &[String]) -> Result<Submission, String> {
    let mut sub = Submission { name: String::new(), nodes: 1, argv: Vec::new() };
    let mut wrapped = None;
    let mut i = 0;
    while i < args.len() {
        let value = || args.get(i + 1).cloned().ok_or_else(|| format!("sbatch: option {} requires an argument", args[i]));
        match args[i].as_str() {
            "--parsable" => {
                i += 1;
                continue;
            }
            "-J" => sub.name = value()?,
            "-N" => {
                let n = value()?;
                sub.nodes = n.parse().map_err(|_| format!("sbatch: bad node count {n}"))?;
            }
            "--wrap" => wrapped = Some(value()?),
            a if a.starts_with("--export=") || a.starts_with("--ntasks-per-node=") => {
                i += 1;
                continue;
            }
            other => return Err(format!("sbatch: unrecognized option {other}")),
        }
        i += 2;
    }
    let wrapped = wrapped.ok_or("sbatch: no --wrap command")?;
    sub.argv = shell_words::split(&wrapped).map_err(|e| format!("sbatch: {e}"))?;
    Ok(sub)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lrm::{JobId, JobSpec, LrmDialect, NativeState, PbsDialect, SlurmDialect};
    use crate::sim::queue::{MaintenancePolicy, MaintenanceWindow};

    fn spec(cmd: &[&str]) -> JobSpec {
        JobSpec::new("comet", "alice", cmd)
    }

    #[test]
    fn pbs_lifecycle_through_the_dialect() {
        let d = PbsDialect;
        let mut lrm = SimLrm::new("comet", Flavor::Pbs, QueueModel::fixed(100), 4, 1);
        let out = lrm.execute(&d.submit_command(JobId(1), &spec(&["sleep", "50"])), SimTime::from_secs(10)).unwrap();
        let id = d.parse_submit(&out).unwrap();
        assert_eq!(id, "1.comet");
        let status = |lrm: &mut SimLrm, t: u64| {
            d.parse_batch_status(&lrm.execute(&d.batch_status_command(&[id.clone()]), SimTime::from_secs(t)).unwrap()).unwrap()[0].clone()
        };
        assert_eq!(status(&mut lrm, 20).state, NativeState::Queued);
        let running = status(&mut lrm, 115);
        assert_eq!(running.state, NativeState::Running);
        assert_eq!(running.started_at, Some(SimTime::from_secs(110)));
        let done = status(&mut lrm, 200);
        assert_eq!(done.state, NativeState::Exited(0));
        assert_eq!(done.ended_at, Some(SimTime::from_secs(160)));
    }

    #[test]
    fn slurm_cancel_and_failure() {
        let d = SlurmDialect;
        let mut lrm = SimLrm::new("bridges", Flavor::Slurm, QueueModel::fixed(10), 4, 1);
        let a = d.parse_submit(&lrm.execute(&d.submit_command(JobId(1), &spec(&["fail", "5", "3"])), SimTime::ZERO).unwrap()).unwrap();
        let b = d.parse_submit(&lrm.execute(&d.submit_command(JobId(2), &spec(&["sleep", "5"])), SimTime::ZERO).unwrap()).unwrap();
        lrm.execute(&d.cancel_command(&b), SimTime::from_secs(3)).unwrap();
        let st = d.parse_batch_status(&lrm.execute(&d.batch_status_command(&[a, b]), SimTime::from_secs(30)).unwrap()).unwrap();
        assert_eq!(st[0].state, NativeState::Exited(3));
        assert_eq!(st[1].state, NativeState::Canceled);
        assert_eq!(st[1].started_at, None);
    }

    #[test]
    fn wrong_flavor_and_oversized_jobs_are_rejected() {
        let mut lrm = SimLrm::new("comet", Flavor::Slurm, QueueModel::fixed(1), 2, 1);
        assert!(lrm.execute("qstat -x -F dsv 1", SimTime::ZERO).is_err());
        let mut big = spec(&["sleep", "1"]);
        big.node_count = 3;
        assert!(lrm.execute(&SlurmDialect.submit_command(JobId(1), &big), SimTime::ZERO).is_err());
    }

    #[test]
    fn held_during_maintenance_and_purged() {
        let mut q = QueueModel::fixed(10);
        q.maintenance_windows.push(MaintenanceWindow { start: SimTime::from_secs(5), end: SimTime::from_secs(100) });
        let mut lrm = SimLrm::new("comet", Flavor::Pbs, q.clone(), 1, 1);
        lrm.execute("qsub -N a -l select=1 -- sleep 1", SimTime::ZERO).unwrap();
        let job = lrm.job("1.comet").unwrap().clone();
        assert_eq!(lrm.phase(&job, SimTime::from_secs(50)), Phase::Queued { held: true });
        assert_eq!(lrm.phase(&job, SimTime::from_secs(100)), Phase::Running { since: SimTime::from_secs(100) });

        q.maintenance_policy = MaintenancePolicy::Purge;
        let mut lrm = SimLrm::new("comet", Flavor::Pbs, q, 1, 1);
        lrm.execute("qsub -N a -l select=1 -- sleep 1", SimTime::ZERO).unwrap();
        let job = lrm.job("1.comet").unwrap().clone();
        assert_eq!(lrm.phase(&job, SimTime::from_secs(50)), Phase::Canceled { started: None, at: SimTime::from_secs(5) });
    }

    #[test]
    fn behaviours() {
        let d = SimDuration::from_secs(60);
        let argv = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(workload_behaviour(&argv(&["sleep", "2.5"]), d), (SimDuration::from_millis(2500), 0));
        assert_eq!(workload_behaviour(&argv(&["fail", "1"]), d), (SimDuration::from_secs(1), 1));
        assert_eq!(workload_behaviour(&argv(&["python", "x.py"]), d), (d, 0));
    }
}
