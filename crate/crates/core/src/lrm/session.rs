use std::collections::BTreeMap;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::transport::{Transport, TransportCall, TransportLog, Verb};
use super::LrmError;
use crate::digest::Digest;
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Sessions unused for longer than this are closed; `None` keeps them
    /// forever.
    pub idle_ttl: Option<SimDuration>,
    /// How long a pair stays unhealthy after a failed handshake.
    pub backoff: SimDuration,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig { idle_ttl: Some(SimDuration::from_secs(300)), backoff: SimDuration::from_secs(30) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub resource: String,
    pub credential: String,
    pub opened_at: SimTime,
    pub last_used: SimTime,
    pub idle_ttl: Option<SimDuration>,
}

impl Session {
    pub fn is_live(&self, now: SimTime) -> bool {
        match self.idle_ttl {
            None => true,
            Some(ttl) => now.since(self.last_used) <= ttl,
        }
    }
}

#[derive(Debug)]
enum Slot {
    Open(Session),
    Unhealthy { until: SimTime, cause: String },
}

/// Holds at most one session per (resource, credential) pair.
#[derive(Debug, Default)]
pub struct SessionPool {
    config: SessionConfig,
    slots: Mutex<BTreeMap<(String, String), Slot>>,
    handshakes: Mutex<(u64, u64)>,
}

impl SessionPool {
    pub fn new(config: SessionConfig) -> Self {
        SessionPool { config, slots: Mutex::new(BTreeMap::new()), handshakes: Mutex::new((0, 0)) }
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    /// Successful handshakes so far.
    pub fn handshake_count(&self) -> u64 {
        self.handshakes.lock().0
    }

    pub fn handshake_failures(&self) -> u64 {
        self.handshakes.lock().1
    }

    /// Returns the live session for the pair, handshaking if there is none.
    /// The duration is the time spent handshaking, zero on reuse.
    pub fn acquire(
        &self,
        transport: &dyn Transport,
        log: &TransportLog,
        resource: &str,
        credential: &str,
        now: SimTime,
    ) -> Result<(Session, SimDuration), LrmError> {
        let key = (resource.to_string(), credential.to_string());
        // held across the handshake so two callers never open the same pair twice
        let mut slots = self.slots.lock();
        match slots.get_mut(&key) {
            Some(Slot::Open(s)) if s.is_live(now) => {
                s.last_used = s.last_used.max(now);
                return Ok((s.clone(), SimDuration::ZERO));
            }
            Some(Slot::Unhealthy { until, cause }) if now < *until => {
                return Err(LrmError::Unhealthy {
                    resource: resource.into(),
                    credential: credential.into(),
                    until: *until,
                    cause: cause.clone(),
                });
            }
            _ => {}
        }
        let result = transport.handshake(resource, credential, now);
        log.record(TransportCall {
            time: now,
            resource: resource.into(),
            credential: credential.into(),
            verb: Verb::Handshake,
            payload_digest: Digest::of(format!("{resource}\n{credential}").as_bytes()),
            ok: result.is_ok(),
        });
        match result {
            Ok(elapsed) => {
                self.handshakes.lock().0 += 1;
                let session = Session {
                    resource: resource.into(),
                    credential: credential.into(),
                    opened_at: now,
                    last_used: now,
                    idle_ttl: self.config.idle_ttl,
                };
                slots.insert(key, Slot::Open(session.clone()));
                Ok((session, elapsed))
            }
            Err(e) => {
                self.handshakes.lock().1 += 1;
                let until = now + self.config.backoff;
                slots.insert(key, Slot::Unhealthy { until, cause: e.to_string() });
                Err(LrmError::Handshake { resource: resource.into(), credential: credential.into(), cause: e.to_string() })
            }
        }
    }

    /// Drops a session after a transport failure so the next use reconnects.
    pub fn invalidate(&self, resource: &str, credential: &str) {
        let mut slots = self.slots.lock();
        if let Some(Slot::Open(_)) = slots.get(&(resource.to_string(), credential.to_string())) {
            slots.remove(&(resource.to_string(), credential.to_string()));
        }
    }

    /// Sessions live at `now`.
    pub fn live_sessions(&self, now: SimTime) -> Vec<Session> {
        self.slots
            .lock()
            .values()
            .filter_map(|s| match s {
                Slot::Open(s) if s.is_live(now) => Some(s.clone()),
                _ => None,
            })
            .collect()
    }
}
