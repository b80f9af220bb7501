//! Total ordering of the lattice into the compaction chain.
//!
//! Every node runs the same deterministic procedure over its own view. For
//! each candidate block (a pending block whose references are all
//! delivered) it tracks which chains ack it and at which height. A set of
//! candidates is delivered once no other candidate can overtake it, either
//! because every chain is represented (normal delivery) or because every
//! remaining candidate is already beaten by more than `phi` chains (early
//! delivery). Delivered sets are emitted in ascending hash order.
//!
//! [`OrderingState`] is the incremental structure with a pairwise count
//! matrix; [`NaiveOrdering`] recomputes everything per event and serves as
//! the oracle.

mod bits;
mod config;
mod incremental;
mod naive;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::Digest;
use crate::{max_faulty, ChainId};

pub use config::{flush_topological, ConfigChange, ConfigOrderer};
pub use incremental::OrderingState;
pub use naive::NaiveOrdering;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrderingError {
    #[error("threshold {phi} outside ({n}/2, {n}]")]
    InvalidPhi { n: usize, phi: usize },
    #[error("block {0} is not a candidate")]
    NotCandidate(Digest),
    #[error("chain {chain} outside [0, {n})")]
    UnknownChain { chain: ChainId, n: usize },
    #[error("block {0} arrived before a block it refers to")]
    NotCausal(Digest),
}

/// Entry of an acking-height vector.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum HeightEntry {
    /// The chain has no pending block at all.
    Undefined,
    Height(u64),
    Infinity,
}

impl HeightEntry {
    /// Strict order used by the count: heights compare by value, any height
    /// beats infinity, and undefined entries never compare.
    pub fn less_than(self, other: HeightEntry) -> bool {
        match (self, other) {
            (HeightEntry::Height(a), HeightEntry::Height(b)) => a < b,
            (HeightEntry::Height(_), HeightEntry::Infinity) => true,
            _ => false,
        }
    }
}

impl fmt::Display for HeightEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeightEntry::Undefined => f.write_str("⊥"),
            HeightEntry::Height(h) => write!(f, "{h}"),
            HeightEntry::Infinity => f.write_str("∞"),
        }
    }
}

/// `|{j : a[j] < b[j]}|`.
pub fn less_count(a: &[HeightEntry], b: &[HeightEntry]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x.less_than(**y)).count()
}

/// Number of height entries in a vector.
pub fn height_count(v: &[HeightEntry]) -> usize {
    v.iter().filter(|e| matches!(e, HeightEntry::Height(_))).count()
}

/// `1` if `a` precedes `b` on more than `phi` chains, `-1` for the reverse,
/// else `0`.
pub fn precede(a: &[HeightEntry], b: &[HeightEntry], phi: usize) -> i8 {
    if less_count(a, b) > phi {
        1
    } else if less_count(b, a) > phi {
        -1
    } else {
        0
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Grade {
    /// `a` precedes `b` whatever arrives later.
    One,
    /// `a` can never precede `b`.
    Zero,
    Undetermined,
}

/// Grade of `a` over `b`. Chains not yet seen (`n - ans_len` of them) can
/// each still add one to the count.
pub fn grade(a: &[HeightEntry], b: &[HeightEntry], phi: usize, n: usize, ans_len: usize) -> Grade {
    grade_from_count(less_count(a, b), phi, n, ans_len)
}

pub fn grade_from_count(count: usize, phi: usize, n: usize, ans_len: usize) -> Grade {
    let slack = n.saturating_sub(ans_len) as i64;
    if count > phi {
        Grade::One
    } else if (count as i64) < phi as i64 - slack {
        Grade::Zero
    } else {
        Grade::Undetermined
    }
}

/// Smallest valid threshold: `2·f_max + 1`, raised to a strict majority
/// where that bound alone is not one.
pub fn default_phi(n: usize) -> usize {
    (2 * max_faulty(n) + 1).max(n / 2 + 1)
}

pub fn validate_phi(n: usize, phi: usize) -> Result<(), OrderingError> {
    if phi > n || 2 * phi <= n {
        return Err(OrderingError::InvalidPhi { n, phi });
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Criteria {
    NoOutput,
    Normal,
    Early,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum DeliveryMode {
    Normal,
    Early,
    /// Topological flush at a configuration boundary.
    Flush,
}

impl DeliveryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DeliveryMode::Normal => "normal",
            DeliveryMode::Early => "early",
            DeliveryMode::Flush => "flush",
        }
    }

    pub fn parse(s: &str) -> Option<DeliveryMode> {
        match s {
            "normal" => Some(DeliveryMode::Normal),
            "early" => Some(DeliveryMode::Early),
            "flush" => Some(DeliveryMode::Flush),
            _ => None,
        }
    }
}

/// One set of blocks delivered together, hashes ascending.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct DeliveryBatch {
    pub index: u64,
    pub mode: DeliveryMode,
    pub blocks: Vec<Digest>,
    /// Configuration the batch belongs to; bumps after each change.
    pub config: u32,
}

impl DeliveryBatch {
    /// `batch_index,mode,hash1;hash2;...`
    pub fn log_line(&self) -> String {
        let hashes: Vec<String> = self.blocks.iter().map(Digest::to_hex).collect();
        format!("{},{},{}", self.index, self.mode.as_str(), hashes.join(";"))
    }

    pub fn parse_log_line(line: &str) -> Option<DeliveryBatch> {
        let mut parts = line.trim().splitn(3, ',');
        let index = parts.next()?.parse().ok()?;
        let mode = DeliveryMode::parse(parts.next()?)?;
        let blocks = parts
            .next()?
            .split(';')
            .filter(|s| !s.is_empty())
            .map(Digest::from_hex)
            .collect::<Option<Vec<_>>>()?;
        Some(DeliveryBatch { index, mode, blocks, config: 0 })
    }
}

pub fn batch_log(batches: &[DeliveryBatch]) -> String {
    let mut s = String::new();
    for b in batches {
        s.push_str(&b.log_line());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests;
