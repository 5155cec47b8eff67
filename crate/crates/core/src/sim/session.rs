//! Interactive job sessions against a simulated world.
//!
//! A session is a journal of operations at simulated times. Opening it
//! rebuilds the world from its config and seed and replays the journal, so
//! separate processes (one per command) see one consistent world.

use serde::{Deserialize, Serialize};

use super::config::World;
use super::engine::Engine;
use crate::lrm::{CancelAck, JobId, JobInfo, JobSpec, LrmError};
use crate::time::{SimDuration, SimTime};

/// Sessions run open-ended; polling continues this long.
const SESSION_HORIZON: SimTime = SimTime::from_secs(10 * 365 * 86_400);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SessionOp {
    Submit {
        at: SimTime,
        resource: String,
        argv: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        credential: Option<String>,
    },
    Cancel {
        at: SimTime,
        job: JobId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SessionJournal {
    pub seed: u64,
    pub now: SimTime,
    #[serde(default)]
    pub ops: Vec<SessionOp>,
}

impl SessionJournal {
    pub fn new(seed: u64) -> Self {
        SessionJournal { seed, ..Default::default() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Lrm(#[from] LrmError),
    #[error("journal does not replay: operation {index} failed with {cause}")]
    Replay { index: usize, cause: LrmError },
}

pub struct Session {
    engine: Engine,
    journal: SessionJournal,
}

impl Session {
    /// Rebuilds the world and replays `journal` up to its current time.
    pub fn open(world: World, journal: SessionJournal) -> Result<Session, SessionError> {
        let mut world = world;
        world.config.horizon = Some(SESSION_HORIZON);
        let mut engine = Engine::new(world, journal.seed)?;
        for (index, op) in journal.ops.iter().enumerate() {
            let result = match op {
                SessionOp::Submit { at, resource, argv, credential } => {
                    engine.advance_to(*at);
                    engine.submit(spec(resource, argv, credential), Some("session".into())).map(|_| ())
                }
                SessionOp::Cancel { at, job } => {
                    engine.advance_to(*at);
                    engine.cancel(*job).map(|_| ())
                }
            };
            result.map_err(|cause| SessionError::Replay { index, cause })?;
        }
        engine.advance_to(journal.now);
        Ok(Session { engine, journal })
    }

    pub fn now(&self) -> SimTime {
        self.engine.now()
    }

    pub fn journal(&self) -> &SessionJournal {
        &self.journal
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    /// Moves simulated time forward, letting queued work progress.
    pub fn advance(&mut self, by: SimDuration) {
        let to = self.engine.now() + by;
        self.engine.advance_to(to);
        self.journal.now = to;
    }

    pub fn submit(&mut self, resource: &str, argv: &[String], credential: Option<&str>) -> Result<JobId, LrmError> {
        let credential = credential.map(str::to_string);
        let id = self.engine.submit(spec(resource, argv, &credential), Some("session".into()))?;
        self.journal.ops.push(SessionOp::Submit {
            at: self.engine.now(),
            resource: resource.to_string(),
            argv: argv.to_vec(),
            credential,
        });
        Ok(id)
    }

    pub fn job(&self, id: JobId) -> Result<JobInfo, LrmError> {
        self.engine.middleware().job(id)
    }

    /// Cancels `id`. Cancelling a finished job is acknowledged and changes
    /// nothing.
    pub fn cancel(&mut self, id: JobId) -> Result<CancelAck, LrmError> {
        let ack = self.engine.cancel(id)?;
        self.journal.ops.push(SessionOp::Cancel { at: self.engine.now(), job: id });
        Ok(ack)
    }

    /// Jobs submitted in this session, in submission order.
    pub fn jobs(&self) -> Vec<JobInfo> {
        self.engine.jobs_labelled("session").iter().filter_map(|id| self.engine.middleware().job(*id).ok()).collect()
    }
}

fn spec(resource: &str, argv: &[String], credential: &Option<String>) -> JobSpec {
    let refs: Vec<&str> = argv.iter().map(String::as_str).collect();
    JobSpec::new(resource, credential.as_deref().unwrap_or(super::config::DEFAULT_CREDENTIAL), &refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lrm::JobState;
    use crate::sim::parse_config;

    fn world() -> World {
        parse_config(
            r#"{"resources": [{"name": "comet", "kind": "hpc_cluster", "node_count": 4,
                 "queue_model": {"distribution": {"kind": "fixed", "value": 100}}}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn replay_reaches_the_same_state() {
        let mut s = Session::open(world(), SessionJournal::new(3)).unwrap();
        let argv = vec!["sleep".to_string(), "50".to_string()];
        let a = s.submit("comet", &argv, None).unwrap();
        s.advance(SimDuration::from_secs(120));
        let b = s.submit("comet", &argv, None).unwrap();
        s.cancel(b).unwrap();
        s.advance(SimDuration::from_secs(500));
        let before: Vec<_> = s.jobs().into_iter().map(|j| j.status).collect();

        let text = serde_json::to_string(s.journal()).unwrap();
        let again = Session::open(world(), serde_json::from_str(&text).unwrap()).unwrap();
        let after: Vec<_> = again.jobs().into_iter().map(|j| j.status).collect();
        assert_eq!(before, after);
        assert_eq!(again.job(a).unwrap().status.state, JobState::Completed);
        assert_eq!(again.job(b).unwrap().status.state, JobState::Canceled);
        assert_eq!(again.now(), SimTime::from_secs(620));
    }

    #[test]
    fn time_moves_on_after_a_quiet_spell() {
        let mut s = Session::open(world(), SessionJournal::new(1)).unwrap();
        s.advance(SimDuration::from_secs(10_000));
        assert_eq!(s.now(), SimTime::from_secs(10_000));
        let id = s.submit("comet", &["sleep".into(), "5".into()], None).unwrap();
        s.advance(SimDuration::from_secs(200));
        let st = s.job(id).unwrap().status;
        assert_eq!(st.state, JobState::Completed);
        assert_eq!(st.entered(JobState::Running), Some(SimTime::from_secs(10_100)));
    }
}
