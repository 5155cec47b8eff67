use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tale::TaleId;
use crate::time::{SimDuration, SimTime};

/// Middleware-issued job identifier, independent of any dialect's native id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct JobId(pub u64);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "j-{:06}", self.0)
    }
}

impl FromStr for JobId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.strip_prefix("j-")
            .and_then(|n| n.parse().ok())
            .map(JobId)
            .ok_or_else(|| format!("malformed job id {s:?}"))
    }
}

impl From<JobId> for String {
    fn from(id: JobId) -> String {
        id.to_string()
    }
}

impl TryFrom<String> for JobId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tale_id: Option<TaleId>,
    pub command: Vec<String>,
    #[serde(default = "one")]
    pub node_count: u32,
    #[serde(default)]
    pub mpi: bool,
    pub resource: String,
    pub credential: String,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

fn one() -> u32 {
    1
}

impl JobSpec {
    pub fn new(resource: impl Into<String>, credential: impl Into<String>, command: &[&str]) -> Self {
        JobSpec {
            tale_id: None,
            command: command.iter().map(|s| s.to_string()).collect(),
            node_count: 1,
            mpi: false,
            resource: resource.into(),
            credential: credential.into(),
            env: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobHandle {
    pub job_id: JobId,
    pub resource: String,
    pub submitted_at: SimTime,
    /// Client-side time spent in the submit call: session setup plus one
    /// transport round trip.
    pub return_latency: SimDuration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum JobState {
    Created,
    Submitted,
    Queued,
    Running,
    Completed,
    Failed,
    Canceled,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Completed | JobState::Failed | JobState::Canceled)
    }

    pub fn name(self) -> &'static str {
        match self {
            JobState::Created => "Created",
            JobState::Submitted => "Submitted",
            JobState::Queued => "Queued",
            JobState::Running => "Running",
            JobState::Completed => "Completed",
            JobState::Failed => "Failed",
            JobState::Canceled => "Canceled",
        }
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The legal transition relation of the job lifecycle.
pub fn is_legal(from: JobState, to: JobState) -> bool {
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

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub job_id: JobId,
    pub from: JobState,
    pub to: JobState,
    /// When the change happened, as reported by the backend where known.
    pub at: SimTime,
    /// When the middleware learned of it.
    pub observed_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal transition {from} -> {to}")]
pub struct IllegalTransition {
    pub from: JobState,
    pub to: JobState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobStatus {
    pub state: JobState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
    /// Every state entered, with its time.
    pub history: Vec<(JobState, SimTime)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
}

impl JobStatus {
    pub fn created(at: SimTime) -> Self {
        JobStatus { state: JobState::Created, exit_code: None, history: vec![(JobState::Created, at)], cause: None }
    }

    pub fn entered(&self, state: JobState) -> Option<SimTime> {
        self.history.iter().find(|(s, _)| *s == state).map(|&(_, t)| t)
    }

    /// Moves to `to` at `at`, clamped so history times never decrease.
    pub fn advance(&mut self, to: JobState, at: SimTime) -> Result<SimTime, IllegalTransition> {
        if !is_legal(self.state, to) {
            return Err(IllegalTransition { from: self.state, to });
        }
        let last = self.history.last().map_or(SimTime::ZERO, |&(_, t)| t);
        let at = at.max(last);
        self.state = to;
        self.history.push((to, at));
        Ok(at)
    }
}
