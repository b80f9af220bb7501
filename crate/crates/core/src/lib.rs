//! Consensus engine and simulation harness for a blocklattice: many single
//! chains, each agreed by a leader-election Byzantine agreement, compacted
//! into one totally ordered chain with median consensus timestamps.
//!
//! The crate is organised bottom-up:
//!
//! * [`crypto`] – deterministic hash/signature/threshold/VRF doubles.
//! * [`crs`] – per-epoch randomness and committee election.
//! * [`ba`] – the per-height agreement state machine.
//! * [`lattice`] – blocks, ack fields and a causal per-node view.
//! * [`ordering`] – total ordering (incremental and a naive oracle).
//! * [`timestamp`] – consensus timestamps.
//! * [`chain`] – proposing, notarizing and the load balancer.
//! * [`sim`] – seeded discrete-event network simulator.
//! * [`analysis`] – hypergeometric committee sizing.

pub mod analysis;
pub mod ba;
pub mod chain;
pub mod crs;
pub mod crypto;
pub mod lattice;
pub mod ordering;
pub mod sim;
pub mod timestamp;

use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of a participating node.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Index of a single chain in the lattice.
pub type ChainId = u32;

/// Simulated time in nanoseconds.
pub type SimTime = u64;

/// Largest number of faults tolerated by a committee of `n`.
pub fn max_faulty(n: usize) -> usize {
    n.saturating_sub(1) / 3
}
