//! Blocks, ack fields and a node's causal view of the lattice.

mod block;
pub mod fixture;
mod view;

pub use block::{
    AckField, Block, CompactionConfirmation, CompactionEntry, Payload, EMPTY_PROPOSER,
};
pub use fixture::{Fixture, FixtureError, Record};
pub use view::{LatticeError, LatticeView, NotaryDirectory, RejectReason, Validation};
