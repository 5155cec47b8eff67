//! Translation of the fixed internal verbs into batch-system command lines.

use std::collections::BTreeMap;

use super::job::{JobId, JobSpec};
use crate::time::SimTime;

/// A job's state in the batch system's own terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NativeState {
    Queued,
    /// Queued but not eligible to start, e.g. during maintenance.
    Held,
    Running,
    Exited(i32),
    Canceled,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NativeStatus {
    pub native_id: String,
    pub state: NativeState,
    pub queued_at: Option<SimTime>,
    pub started_at: Option<SimTime>,
    pub ended_at: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{dialect}: cannot parse {what}: {detail}")]
pub struct DialectError {
    pub dialect: String,
    pub what: &'static str,
    pub detail: String,
}

/// Adapter between the middleware's verbs {submit, batch_status, cancel}
/// and one batch system's command syntax.
pub trait LrmDialect: Send + Sync {
    fn name(&self) -> &str;
    fn submit_command(&self, job: JobId, spec: &JobSpec) -> String;
    fn parse_submit(&self, output: &str) -> Result<String, DialectError>;
    /// One command covering all of `native_ids`.
    fn batch_status_command(&self, native_ids: &[String]) -> String;
    fn parse_batch_status(&self, output: &str) -> Result<Vec<NativeStatus>, DialectError>;
    fn cancel_command(&self, native_id: &str) -> String;
}

fn error(dialect: &str, what: &'static str, detail: impl Into<String>) -> DialectError {
    DialectError { dialect: dialect.to_string(), what, detail: detail.into() }
}

fn parse_time(dialect: &str, field: &str) -> Result<Option<SimTime>, DialectError> {
    match field {
        "" | "Unknown" | "None" => Ok(None),
        t => SimTime::parse_decimal(t).map(Some).ok_or_else(|| error(dialect, "timestamp", t)),
    }
}

fn single_token(dialect: &str, output: &str) -> Result<String, DialectError> {
    let id = output.trim();
    if id.is_empty() || id.contains(char::is_whitespace) {
        return Err(error(dialect, "submit reply", output.trim()));
    }
    Ok(id.to_string())
}

/// PBS-style commands: `qsub`, `qstat -x -F dsv`, `qdel`.
#[derive(Debug, Clone, Default)]
pub struct PbsDialect;

/// Exit status PBS reports for a job killed by `qdel`.
pub const PBS_DELETED_EXIT: i32 = 271;

impl LrmDialect for PbsDialect {
    fn name(&self) -> &str {
        "sim-pbs"
    }

    fn submit_command(&self, job: JobId, spec: &JobSpec) -> String {
        let mut argv = vec!["qsub".to_string(), "-N".into(), job.to_string(), "-l".into()];
        argv.push(if spec.mpi {
            format!("select={}:mpiprocs=1", spec.node_count)
        } else {
            format!("select={}", spec.node_count)
        });
        if !spec.env.is_empty() {
            argv.push("-v".into());
            argv.push(spec.env.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(","));
        }
        argv.push("--".into());
        argv.extend(spec.command.iter().cloned());
        shell_words::join(argv)
    }

    fn parse_submit(&self, output: &str) -> Result<String, DialectError> {
        single_token(self.name(), output)
    }

    fn batch_status_command(&self, native_ids: &[String]) -> String {
        let mut argv: Vec<&str> = vec!["qstat", "-x", "-F", "dsv"];
        argv.extend(native_ids.iter().map(String::as_str));
        shell_words::join(argv)
    }

    fn parse_batch_status(&self, output: &str) -> Result<Vec<NativeStatus>, DialectError> {
        let mut out = Vec::new();
        for line in output.lines().filter(|l| !l.trim().is_empty()) {
            let fields: BTreeMap<&str, &str> = line.split('|').filter_map(|kv| kv.split_once('=')).collect();
            let get = |k: &str| fields.get(k).copied().unwrap_or("");
            let native_id = get("Job_Id");
            if native_id.is_empty() {
                return Err(error(self.name(), "qstat line", line));
            }
            let exit = match get("Exit_status") {
                "" => None,
                code => Some(code.parse::<i32>().map_err(|_| error(self.name(), "Exit_status", code))?),
            };
            let state = match get("job_state") {
                "Q" | "W" => NativeState::Queued,
                "H" => NativeState::Held,
                "R" | "E" => NativeState::Running,
                "F" => match exit {
                    Some(code) if code != PBS_DELETED_EXIT => NativeState::Exited(code),
                    _ => NativeState::Canceled,
                },
                other => return Err(error(self.name(), "job_state", other)),
            };
            out.push(NativeStatus {
                native_id: native_id.to_string(),
                state,
                queued_at: parse_time(self.name(), get("qtime"))?,
                started_at: parse_time(self.name(), get("stime"))?,
                ended_at: parse_time(self.name(), get("obittime"))?,
            });
        }
        Ok(out)
    }

    fn cancel_command(&self, native_id: &str) -> String {
        shell_words::join(["qdel", native_id])
    }
}

/// Slurm-style commands: `sbatch --parsable`, `sacct -P`, `scancel`.
#[derive(Debug, Clone, Default)]
pub struct SlurmDialect;

impl LrmDialect for SlurmDialect {
    fn name(&self) -> &str {
        "sim-slurm"
    }

    fn submit_command(&self, job: JobId, spec: &JobSpec) -> String {
        let mut argv = vec![
            "sbatch".to_string(),
            "--parsable".into(),
            "-J".into(),
            job.to_string(),
            "-N".into(),
            spec.node_count.to_string(),
        ];
        if spec.mpi {
            argv.push("--ntasks-per-node=1".into());
        }
        let mut export = String::from("--export=ALL");
        for (k, v) in &spec.env {
            export.push_str(&format!(",{k}={v}"));
        }
        argv.push(export);
        argv.push("--wrap".into());
        argv.push(shell_words::join(&spec.command));
        shell_words::join(argv)
    }

    fn parse_submit(&self, output: &str) -> Result<String, DialectError> {
        let id = single_token(self.name(), output)?;
        Ok(id.split(';').next().unwrap_or_default().to_string())
    }

    fn batch_status_command(&self, native_ids: &[String]) -> String {
        shell_words::join([
            "sacct",
            "-X",
            "-n",
            "-P",
            "-o",
            "JobID,State,ExitCode,Submit,Start,End",
            "-j",
            &native_ids.join(","),
        ])
    }

    fn parse_batch_status(&self, output: &str) -> Result<Vec<NativeStatus>, DialectError> {
        let mut out = Vec::new();
        for line in output.lines().filter(|l| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split('|').collect();
            let [id, state, exit, submit, start, end] = cols[..] else {
                return Err(error(self.name(), "sacct line", line));
            };
            let code = exit
                .split(':')
                .next()
                .and_then(|c| c.parse::<i32>().ok())
                .ok_or_else(|| error(self.name(), "ExitCode", exit))?;
            let state = match state.split_whitespace().next().unwrap_or("") {
                "PENDING" | "REQUEUED" | "SUSPENDED" => NativeState::Queued,
                "REQUEUE_HOLD" | "RESV_DEL_HOLD" => NativeState::Held,
                "RUNNING" | "COMPLETING" => NativeState::Running,
                "COMPLETED" => NativeState::Exited(code),
                "FAILED" | "TIMEOUT" | "NODE_FAIL" | "OUT_OF_MEMORY" | "BOOT_FAIL" => {
                    NativeState::Exited(if code == 0 { 1 } else { code })
                }
                "CANCELLED" | "DEADLINE" | "PREEMPTED" => NativeState::Canceled,
                other => return Err(error(self.name(), "State", other)),
            };
            out.push(NativeStatus {
                native_id: id.to_string(),
                state,
                queued_at: parse_time(self.name(), submit)?,
                started_at: parse_time(self.name(), start)?,
                ended_at: parse_time(self.name(), end)?,
            });
        }
        Ok(out)
    }

    fn cancel_command(&self, native_id: &str) -> String {
        shell_words::join(["scancel", native_id])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> JobSpec {
        let mut s = JobSpec::new("comet", "alice", &["python", "run.py", "--out", "a b"]);
        s.node_count = 4;
        s.mpi = true;
        s.env.insert("TALE_ID".into(), "t1".into());
        s
    }

    #[test]
    fn pbs_golden_commands() {
        let d = PbsDialect;
        assert_eq!(
            d.submit_command(JobId(7), &spec()),
            "qsub -N j-000007 -l 'select=4:mpiprocs=1' -v 'TALE_ID=t1' -- python run.py --out 'a b'"
        );
        assert_eq!(d.batch_status_command(&["1.comet".into(), "2.comet".into()]), "qstat -x -F dsv 1.comet 2.comet");
        assert_eq!(d.cancel_command("1.comet"), "qdel 1.comet");
        assert_eq!(d.parse_submit("17.comet\n").unwrap(), "17.comet");
        assert!(d.parse_submit("qsub: illegal option").is_err());
    }

    #[test]
    fn pbs_status_parsing() {
        let out = "Job_Id=1.c|job_state=Q|qtime=5.000000\n\
                   Job_Id=2.c|job_state=R|qtime=5.000000|stime=9.500000\n\
                   Job_Id=3.c|job_state=F|Exit_status=0|qtime=1.000000|stime=2.000000|obittime=3.000000\n\
                   Job_Id=4.c|job_state=F|Exit_status=271|qtime=1.000000|stime=2.000000|obittime=3.000000\n\
                   Job_Id=5.c|job_state=F|qtime=1.000000|obittime=3.000000\n";
        let st = PbsDialect.parse_batch_status(out).unwrap();
        let states: Vec<_> = st.iter().map(|s| s.state).collect();
        assert_eq!(
            states,
            vec![NativeState::Queued, NativeState::Running, NativeState::Exited(0), NativeState::Canceled, NativeState::Canceled]
        );
        assert_eq!(st[1].started_at, Some(SimTime::from_micros(9_500_000)));
        assert!(PbsDialect.parse_batch_status("job_state=Q").is_err());
    }

    #[test]
    fn slurm_golden_commands() {
        let d = SlurmDialect;
        assert_eq!(
            d.submit_command(JobId(7), &spec()),
            "sbatch --parsable -J j-000007 -N 4 '--ntasks-per-node=1' '--export=ALL,TALE_ID=t1' --wrap 'python run.py --out '\\''a b'\\'''"
        );
        assert_eq!(
            d.batch_status_command(&["41".into(), "42".into()]),
            "sacct -X -n -P -o JobID,State,ExitCode,Submit,Start,End -j 41,42"
        );
        assert_eq!(d.parse_submit("42;cluster\n").unwrap(), "42");
    }

    #[test]
    fn slurm_status_parsing() {
        let out = "41|PENDING|0:0|1.000000|Unknown|Unknown\n42|CANCELLED by 0|0:15|1.000000|Unknown|4.000000\n43|FAILED|3:0|1.000000|2.000000|5.000000\n";
        let st = SlurmDialect.parse_batch_status(out).unwrap();
        assert_eq!(st[0].state, NativeState::Queued);
        assert_eq!(st[0].started_at, None);
        assert_eq!(st[1].state, NativeState::Canceled);
        assert_eq!(st[2].state, NativeState::Exited(3));
        assert!(SlurmDialect.parse_batch_status("41|PENDING").is_err());
    }
}
