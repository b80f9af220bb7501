//! Seeded discrete-event simulation of a full deployment: gossip with
//! bounded delays, partitions, scripted Byzantine behaviour, and per-run
//! invariant checks.
//!
//! ```
//! use lattice_core::sim::{run, Scenario};
//!
//! let sc = Scenario::new("doc", 4, 1, 5);
//! let report = run(sc).unwrap();
//! assert!(report.violations.is_empty());
//! // Nodes may settle a little past the target before the run stops.
//! assert!(report.heights.len() >= 5);
//! ```

mod adversary;
mod context;
mod network;
mod node;
mod report;
mod run;
mod scenario;

pub use context::{Payload, Registry};
pub use node::{CompactionRow, DecisionRecord, NodeCounters, Timer};
pub use report::{
    compare_report_dirs, read_transcript, Divergence, HeightRecord, NodeReport, RunReport, RunStats, Violation,
};
pub use run::{replay, run, HealRounds, Simulation, TranscriptEvent};
pub use scenario::{
    AdversarySpec, Behavior, ConfigChangeSpec, DelayModel, DelaySpec, MembershipSpec, PartitionSpec, Scenario,
    TransactionSpec, MS,
};

use crate::SimTime;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    /// The run reached its time horizon before every correct node settled
    /// the target height.
    #[error("horizon exceeded at {time} ns")]
    HorizonExceeded { time: SimTime, report: Box<RunReport> },
}
