//! Queue-wait models for simulated batch resources.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::time::{SimDuration, SimTime};

/// Distribution of the time a job spends queued behind other users' work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WaitDistribution {
    Fixed { value: SimDuration },
    Uniform { min: SimDuration, max: SimDuration },
    Exponential { mean: SimDuration },
}

impl WaitDistribution {
    pub fn mean(&self) -> SimDuration {
        match *self {
            WaitDistribution::Fixed { value } => value,
            WaitDistribution::Uniform { min, max } => SimDuration::from_micros((min.as_micros() + max.as_micros()) / 2),
            WaitDistribution::Exponential { mean } => mean,
        }
    }

    pub fn median(&self) -> SimDuration {
        match *self {
            WaitDistribution::Exponential { mean } => SimDuration::from_secs_f64(mean.as_secs_f64() * std::f64::consts::LN_2),
            _ => self.mean(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SimDuration {
        match *self {
            WaitDistribution::Fixed { value } => value,
            WaitDistribution::Uniform { min, max } => {
                if max <= min {
                    min
                } else {
                    SimDuration::from_micros(rng.random_range(min.as_micros()..=max.as_micros()))
                }
            }
            WaitDistribution::Exponential { mean } => {
                if mean.is_zero() {
                    return SimDuration::ZERO;
                }
                let exp = Exp::new(1.0 / mean.as_secs_f64()).expect("positive rate");
                SimDuration::from_secs_f64(exp.sample(rng))
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            WaitDistribution::Uniform { min, max } if min > max => Err(format!("uniform min {min} exceeds max {max}")),
            _ => Ok(()),
        }
    }
}

/// What the resource does with queued jobs whose start falls inside a
/// maintenance window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaintenancePolicy {
    /// Keep them queued until the window ends.
    #[default]
    Hold,
    /// Drop them from the queue when the window opens.
    Purge,
}

/// Half-open interval `[start, end)` during which no job starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(SimTime, SimTime)", into = "(SimTime, SimTime)")]
pub struct MaintenanceWindow {
    pub start: SimTime,
    pub end: SimTime,
}

impl From<(SimTime, SimTime)> for MaintenanceWindow {
    fn from((start, end): (SimTime, SimTime)) -> Self {
        MaintenanceWindow { start, end }
    }
}

impl From<MaintenanceWindow> for (SimTime, SimTime) {
    fn from(w: MaintenanceWindow) -> Self {
        (w.start, w.end)
    }
}

impl MaintenanceWindow {
    pub fn contains(&self, t: SimTime) -> bool {
        self.start <= t && t < self.end
    }
}

fn default_runtime() -> SimDuration {
    SimDuration::from_secs(60)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueModel {
    pub distribution: WaitDistribution,
    /// Mixed into the run seed so two queues with equal parameters still
    /// draw different waits.
    #[serde(default)]
    pub seed: u64,
    /// An advance reservation: matching submissions start without waiting.
    #[serde(default)]
    pub reservation: bool,
    #[serde(default)]
    pub maintenance_windows: Vec<MaintenanceWindow>,
    #[serde(default)]
    pub maintenance_policy: MaintenancePolicy,
    /// Runtime of jobs whose command does not state one.
    #[serde(default = "default_runtime")]
    pub default_runtime: SimDuration,
}

/// When a queued job will start, or when the resource drops it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartDecision {
    StartAt(SimTime),
    PurgedAt(SimTime),
}

impl QueueModel {
    pub fn new(distribution: WaitDistribution) -> Self {
        QueueModel {
            distribution,
            seed: 0,
            reservation: false,
            maintenance_windows: Vec::new(),
            maintenance_policy: MaintenancePolicy::Hold,
            default_runtime: default_runtime(),
        }
    }

    pub fn fixed(secs: u64) -> Self {
        Self::new(WaitDistribution::Fixed { value: SimDuration::from_secs(secs) })
    }

    pub fn exponential(mean_secs: u64) -> Self {
        Self::new(WaitDistribution::Exponential { mean: SimDuration::from_secs(mean_secs) })
    }

    pub fn validate(&self) -> Result<(), String> {
        self.distribution.validate()?;
        for w in &self.maintenance_windows {
            if w.end <= w.start {
                return Err(format!("maintenance window [{}, {}) is empty", w.start, w.end));
            }
        }
        Ok(())
    }

    /// Analytic mean wait, used for planning estimates.
    pub fn expected_wait(&self) -> SimDuration {
        if self.reservation {
            SimDuration::ZERO
        } else {
            self.distribution.mean()
        }
    }

    pub fn window_at(&self, t: SimTime) -> Option<&MaintenanceWindow> {
        self.maintenance_windows.iter().find(|w| w.contains(t))
    }

    /// Draws the queue wait for a job submitted at `submitted`.
    ///
    /// A reservation waits zero. A submission during maintenance waits for
    /// the window to close and then for a regular draw.
    pub fn sample_queue_wait<R: Rng + ?Sized>(&self, rng: &mut R, submitted: SimTime) -> SimDuration {
        if self.reservation {
            return SimDuration::ZERO;
        }
        let drawn = self.distribution.sample(rng);
        match self.window_at(submitted) {
            Some(w) => w.end.since(submitted) + drawn,
            None => drawn,
        }
    }

    /// Applies maintenance windows to a nominal start time.
    pub fn start_decision(&self, submitted: SimTime, wait: SimDuration) -> StartDecision {
        let mut start = submitted + wait;
        // windows may chain back to back
        for _ in 0..=self.maintenance_windows.len() {
            match self.window_at(start) {
                None => return StartDecision::StartAt(start),
                Some(w) => match self.maintenance_policy {
                    MaintenancePolicy::Hold => start = w.end,
                    MaintenancePolicy::Purge => return StartDecision::PurgedAt(w.start.max(submitted)),
                },
            }
        }
        StartDecision::StartAt(start)
    }
}
