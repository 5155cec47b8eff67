use std::path::{Path, PathBuf};

use clap::Subcommand;
use serde::{Deserialize, Serialize};
use serde_json::json;
use talescale::lrm::{CancelAck, JobId, JobInfo};
use talescale::sim::{load_config, Session, SessionJournal};
use talescale::SimDuration;

use crate::output::{parse_json, user, write, Out};
use crate::ConfigArg;

#[derive(clap::Args, Debug, Clone)]
pub struct SessionArgs {
    /// Session journal; created on first use.
    #[arg(long, default_value = "talescale-session.json")]
    pub session: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Seed of a new session.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seconds of simulated time to let pass before acting.
    #[arg(long, default_value_t = 0.0)]
    pub advance: f64,
}

#[derive(Subcommand, Debug)]
pub enum JobCmd {
    Submit {
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long)]
        resource: String,
        /// Command line, split like a shell would.
        #[arg(long)]
        command: String,
        #[arg(long)]
        credential: Option<String>,
    },
    /// One job with `--id`, else every job of the session.
    Status {
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long)]
        id: Option<String>,
    },
    /// Cancelling a finished job succeeds and changes nothing.
    Cancel {
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long)]
        id: String,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct SessionFile {
    config: PathBuf,
    journal: SessionJournal,
}

/// Reopens the session at `args.session`, or starts one from the config.
fn open(args: &SessionArgs) -> anyhow::Result<(Session, PathBuf)> {
    let (config, journal) = if args.session.exists() {
        let f: SessionFile = parse_json(&args.session)?;
        (f.config, f.journal)
    } else {
        let path = args.config.config.clone().ok_or_else(|| user("no session yet; pass --config or set TALESCALE_CONFIG"))?;
        let path = std::path::absolute(&path).unwrap_or(path);
        (path, SessionJournal::new(args.seed))
    };
    let world = load_config(&config).map_err(user)?;
    let mut session = Session::open(world, journal).map_err(user)?;
    if !(args.advance.is_finite() && args.advance >= 0.0) {
        return Err(user("--advance must be a non-negative number of seconds"));
    }
    session.advance(SimDuration::from_secs_f64(args.advance));
    Ok((session, config))
}

fn save(path: &Path, session: &Session, config: PathBuf) -> anyhow::Result<()> {
    let f = SessionFile { config, journal: session.journal().clone() };
    write(path, (serde_json::to_string_pretty(&f)? + "\n").as_bytes())
}

fn parse_id(s: &str) -> anyhow::Result<JobId> {
    s.parse().map_err(user)
}

fn describe(j: &JobInfo) -> serde_json::Value {
    json!({
        "id": j.handle.job_id.to_string(),
        "resource": j.spec.resource,
        "command": j.spec.command,
        "native_id": j.native_id,
        "state": j.status.state.name(),
        "exit_code": j.status.exit_code,
        "history": j.status.history.iter().map(|(s, t)| json!({"state": s.name(), "at": t})).collect::<Vec<_>>(),
    })
}

fn line(j: &JobInfo) -> String {
    format!("{}  {:<10} {:<12} {}\n", j.handle.job_id, j.status.state.name(), j.spec.resource, j.spec.command.join(" "))
}

pub fn run(cmd: JobCmd, out: &Out) -> anyhow::Result<()> {
    match cmd {
        JobCmd::Submit { session: args, resource, command, credential } => {
            let argv = shell_words(&command)?;
            let (mut s, config) = open(&args)?;
            let id = s.submit(&resource, &argv, credential.as_deref()).map_err(user)?;
            save(&args.session, &s, config)?;
            let j = s.job(id).map_err(user)?;
            let v = json!({"now": s.now(), "job": describe(&j)});
            out.emit(&v, || format!("t={} submitted {}", s.now(), line(&j)))
        }
        JobCmd::Status { session: args, id } => {
            let (s, config) = open(&args)?;
            save(&args.session, &s, config)?;
            match id {
                Some(id) => {
                    let j = s.job(parse_id(&id)?).map_err(user)?;
                    let v = json!({"now": s.now(), "job": describe(&j)});
                    out.emit(&v, || {
                        let mut text = format!("t={} {}", s.now(), line(&j));
                        for (st, t) in &j.status.history {
                            text += &format!("  {:<10} at {t}\n", st.name());
                        }
                        text
                    })
                }
                None => {
                    let jobs = s.jobs();
                    let v = json!({"now": s.now(), "jobs": jobs.iter().map(describe).collect::<Vec<_>>()});
                    out.emit(&v, || format!("t={}\n", s.now()) + &jobs.iter().map(line).collect::<String>())
                }
            }
        }
        JobCmd::Cancel { session: args, id } => {
            let id = parse_id(&id)?;
            let (mut s, config) = open(&args)?;
            let ack = s.cancel(id).map_err(user)?;
            save(&args.session, &s, config)?;
            let (ack_name, state) = match ack {
                CancelAck::Requested => ("requested", None),
                CancelAck::AlreadyTerminal(st) => ("already_terminal", Some(st.name())),
            };
            let v = json!({"now": s.now(), "id": id.to_string(), "ack": ack_name, "state": state});
            out.emit(&v, || match state {
                Some(st) => format!("{id} already {st}; nothing to cancel\n"),
                None => format!("cancel of {id} requested\n"),
            })
        }
    }
}

fn shell_words(command: &str) -> anyhow::Result<Vec<String>> {
    let argv = talescale::sim::config::Command::Line(command.to_string()).argv().map_err(user)?;
    if argv.is_empty() {
        return Err(user("--command is empty"));
    }
    Ok(argv)
}
