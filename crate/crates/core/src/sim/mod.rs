//! A deterministic discrete-event simulator. Simulated batch systems sit
//! behind a simulated network, and the real middleware, pilot pools, data
//! cache and proxy run against them on a manual clock. Equal config and
//! seed give an identical trace.

pub mod config;
pub mod engine;
pub mod events;
pub mod lrm;
pub mod measure;
pub mod metrics;
pub mod queue;
pub mod report;
pub mod session;
pub mod trace;
pub mod transport;

pub use config::{load_config, parse_config, ConfigError, SimConfig, Step, World};
pub use engine::{run_scenario, Engine, RunOutput};
pub use measure::{launch_once, measure_models, median_ttf, run_report, MeasureError, MeasureOptions};
pub use metrics::{mean, median, ScenarioMetrics};
pub use queue::{MaintenancePolicy, MaintenanceWindow, QueueModel, WaitDistribution};
pub use report::{emit_report, Report, ReportFormat, ReportRow};
pub use session::{Session, SessionError, SessionJournal, SessionOp};
pub use trace::{Trace, TraceEvent};

/// Derives an independent stream seed for one named component, so adding a
/// resource does not shift the random numbers of the others.
pub fn mix_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, then a splitmix64 finaliser
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
