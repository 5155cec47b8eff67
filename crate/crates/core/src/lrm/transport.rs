//! Remote command execution and the call log used as ground truth for
//! middleware counters.

use std::fmt;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub output: String,
    pub elapsed: SimDuration,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("{resource} unreachable: {cause}")]
    Unreachable { resource: String, cause: String },
    #[error("authentication to {resource} as {credential} refused")]
    Refused { resource: String, credential: String },
    #[error("{resource} rejected command: {message}")]
    Command { resource: String, message: String },
}

/// Something like SSH: authenticate once per session, then run commands.
pub trait Transport: Send + Sync {
    /// Opens a session and returns the time the handshake took.
    fn handshake(&self, resource: &str, credential: &str, at: SimTime) -> Result<SimDuration, TransportError>;
    fn execute(&self, resource: &str, credential: &str, command: &str, at: SimTime) -> Result<Reply, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Handshake,
    Submit,
    BatchStatus,
    Cancel,
}

impl Verb {
    pub fn name(self) -> &'static str {
        match self {
            Verb::Handshake => "handshake",
            Verb::Submit => "submit",
            Verb::BatchStatus => "batch_status",
            Verb::Cancel => "cancel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportCall {
    pub time: SimTime,
    pub resource: String,
    pub credential: String,
    pub verb: Verb,
    pub payload_digest: Digest,
    pub ok: bool,
}

impl fmt::Display for TransportCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} | {} | {} | {} | {}", self.time, self.resource, self.credential, self.verb.name(), self.payload_digest)
    }
}

/// Append-only record of every transport call the middleware makes.
#[derive(Debug, Default)]
pub struct TransportLog {
    calls: Mutex<Vec<TransportCall>>,
}

impl TransportLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, call: TransportCall) {
        self.calls.lock().push(call);
    }

    pub fn snapshot(&self) -> Vec<TransportCall> {
        self.calls.lock().clone()
    }

    /// Calls recorded from index `start` on.
    pub fn since(&self, start: usize) -> Vec<TransportCall> {
        self.calls.lock().get(start..).map(<[_]>::to_vec).unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.calls.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.lock().is_empty()
    }

    pub fn count(&self, verb: Verb) -> usize {
        self.calls.lock().iter().filter(|c| c.verb == verb).count()
    }

    pub fn count_for(&self, resource: &str, verb: Verb) -> usize {
        self.calls.lock().iter().filter(|c| c.verb == verb && c.resource == resource).count()
    }

    /// One line per call: `time | resource | credential | verb | payload-digest`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in self.calls.lock().iter() {
            s.push_str(&c.to_string());
            s.push('\n');
        }
        s
    }
}

/// Counts non-empty lines of a rendered log with the given verb.
pub fn count_rendered(log: &str, verb: Verb) -> usize {
    log.lines().filter(|l| l.split(" | ").nth(3) == Some(verb.name())).count()
}
