//! Consensus timestamps for the compaction chain.
//!
//! Walking the ordered blocks, each chain's latest block timestamp is kept in
//! a vector and every block is stamped with the lower median of that vector.
//! A single proposer moves its own entry only, so it cannot drag the median
//! past the honest majority.

use thiserror::Error;

use crate::crypto::Digest;
use crate::lattice::Block;
use crate::{ChainId, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimestampError {
    #[error("chain {chain} outside [0, {n})")]
    UnknownChain { chain: ChainId, n: usize },
}

/// Element at index `(len - 1) / 2` of the ascending sort.
pub fn lower_median(values: &[SimTime]) -> SimTime {
    assert!(!values.is_empty(), "median of an empty vector");
    let mut v = values.to_vec();
    let mid = (v.len() - 1) / 2;
    *v.select_nth_unstable(mid).1
}

/// Latest block timestamp per chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimestampVector {
    entries: Vec<SimTime>,
}

impl TimestampVector {
    pub fn new(genesis: Vec<SimTime>) -> TimestampVector {
        TimestampVector { entries: genesis }
    }

    pub fn entries(&self) -> &[SimTime] {
        &self.entries
    }

    pub fn update(&mut self, chain: ChainId, timestamp: SimTime) -> Result<(), TimestampError> {
        let n = self.entries.len();
        let slot = self
            .entries
            .get_mut(chain as usize)
            .ok_or(TimestampError::UnknownChain { chain, n })?;
        *slot = timestamp;
        Ok(())
    }

    pub fn median(&self) -> SimTime {
        lower_median(&self.entries)
    }
}

/// Streaming stamper that also handles a change of chain count.
#[derive(Clone, Debug)]
pub struct Timestamper {
    vector: TimestampVector,
    /// Clamp every output to at least the previous one.
    monotone: bool,
    last: Option<SimTime>,
}

impl Timestamper {
    pub fn new(genesis: Vec<SimTime>, monotone: bool) -> Timestamper {
        Timestamper { vector: TimestampVector::new(genesis), monotone, last: None }
    }

    pub fn vector(&self) -> &TimestampVector {
        &self.vector
    }

    pub fn last(&self) -> Option<SimTime> {
        self.last
    }

    pub fn stamp(&mut self, block: &Block) -> Result<SimTime, TimestampError> {
        self.vector.update(block.chain, block.timestamp)?;
        let mut t = self.vector.median();
        if self.monotone {
            t = t.max(self.last.unwrap_or(0));
        }
        self.last = Some(t);
        Ok(t)
    }

    /// Resizes the vector to `chains` entries. Added chains start at the
    /// last consensus time (or `fallback` before any block), dropped chains
    /// are removed, and from here on outputs never decrease.
    pub fn reconfigure(&mut self, chains: usize, fallback: SimTime) {
        let start = self.last.unwrap_or(fallback);
        self.vector.entries.resize(chains, start);
        self.monotone = true;
    }
}

/// Stamps an ordered block sequence.
pub fn consensus_timestamps(
    ordered: &[Block],
    genesis: &[SimTime],
    monotone: bool,
) -> Result<Vec<(Digest, SimTime)>, TimestampError> {
    let mut s = Timestamper::new(genesis.to_vec(), monotone);
    ordered.iter().map(|b| Ok((b.hash, s.stamp(b)?))).collect()
}

/// True iff every pair of sequences agrees on their common prefix.
pub fn verify_timestamp_agreement(outputs: &[Vec<(Digest, SimTime)>]) -> bool {
    let Some(shortest) = outputs.iter().map(Vec::len).min() else {
        return true;
    };
    outputs.windows(2).all(|w| w[0][..shortest] == w[1][..shortest])
}
