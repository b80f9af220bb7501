use std::borrow::Cow;
use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{default_phi, DeliveryBatch, DeliveryMode, OrderingError, OrderingState};
use crate::crypto::Digest;
use crate::lattice::Block;
use crate::{ChainId, SimTime};

/// Switch from the current chain set to `chains` chains for blocks whose
/// timestamp is at least `time`.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ConfigChange {
    pub time: SimTime,
    pub chains: u32,
    #[serde(default)]
    pub phi: Option<usize>,
}

impl ConfigChange {
    pub fn phi(&self) -> usize {
        self.phi.unwrap_or_else(|| default_phi(self.chains as usize))
    }
}

/// Delivers `blocks` in waves: each wave is every block whose references
/// are all delivered, in hash order.
pub fn flush_topological(blocks: &[Block], delivered: &HashSet<Digest>, first_index: u64) -> Vec<DeliveryBatch> {
    let mut done = delivered.clone();
    let mut left: Vec<&Block> = blocks.iter().filter(|b| !done.contains(&b.hash)).collect();
    let mut out = Vec::new();
    let mut index = first_index;
    while !left.is_empty() {
        let known: HashSet<Digest> = left.iter().map(|b| b.hash).collect();
        let mut wave: Vec<Digest> = left
            .iter()
            .filter(|b| b.references().all(|(_, _, r)| done.contains(&r) || !known.contains(&r)))
            .map(|b| b.hash)
            .collect();
        assert!(!wave.is_empty(), "reference cycle among pending blocks");
        wave.sort();
        done.extend(wave.iter().copied());
        left.retain(|b| !done.contains(&b.hash));
        out.push(DeliveryBatch { index, mode: DeliveryMode::Flush, blocks: wave, config: 0 });
        index += 1;
    }
    out
}

/// Drops acks that point at chains the new configuration no longer has.
/// Their pre-change blocks were flushed at the switch and their later
/// blocks are never delivered.
fn without_removed(block: &Block, chains: u32) -> Cow<'_, Block> {
    if block.acks.iter().all(|a| a.chain < chains) {
        return Cow::Borrowed(block);
    }
    let mut b = block.clone();
    b.acks.retain(|a| a.chain < chains);
    Cow::Owned(b)
}

enum Phase {
    Before,
    After,
}

/// Total ordering across at most one configuration change.
///
/// Before the change the old chain set is ordered normally. Once the first
/// post-change block of every old chain has arrived, whatever the old
/// ordering still holds is flushed topologically, and a fresh ordering
/// starts for the new chain set with the old prefixes counted as
/// delivered. Post-change blocks of removed chains are dropped.
pub struct ConfigOrderer {
    state: OrderingState,
    change: Option<ConfigChange>,
    old_chains: u32,
    phase: Phase,
    boundary: BTreeMap<ChainId, u64>,
    buffered: Vec<Block>,
}

impl ConfigOrderer {
    pub fn new(chains: u32, phi: usize, change: Option<ConfigChange>) -> Result<ConfigOrderer, OrderingError> {
        if let Some(c) = &change {
            super::validate_phi(c.chains as usize, c.phi())?;
        }
        Ok(ConfigOrderer {
            state: OrderingState::new(chains as usize, phi)?,
            change,
            old_chains: chains,
            phase: Phase::Before,
            boundary: BTreeMap::new(),
            buffered: Vec::new(),
        })
    }

    /// Whether a block belongs to the post-change configuration.
    pub fn is_after_change(&self, block: &Block) -> bool {
        self.change.is_some_and(|c| block.timestamp >= c.time)
    }

    pub fn switched(&self) -> bool {
        matches!(self.phase, Phase::After)
    }

    pub fn state(&self) -> &OrderingState {
        &self.state
    }

    pub fn receive_block(&mut self, block: &Block) -> Result<Vec<DeliveryBatch>, OrderingError> {
        let Some(change) = self.change else {
            return self.state.receive_block(block);
        };
        match self.phase {
            Phase::After => {
                if block.chain >= change.chains {
                    return Ok(Vec::new());
                }
                self.state.receive_block(&without_removed(block, change.chains))
            }
            Phase::Before if block.timestamp < change.time => self.state.receive_block(block),
            Phase::Before => {
                if block.chain < self.old_chains {
                    self.boundary.entry(block.chain).or_insert(block.height);
                }
                if block.chain < change.chains {
                    self.buffered.push(block.clone());
                }
                if self.boundary.len() == self.old_chains as usize {
                    self.switch(change)
                } else {
                    Ok(Vec::new())
                }
            }
        }
    }

    fn switch(&mut self, change: ConfigChange) -> Result<Vec<DeliveryBatch>, OrderingError> {
        let mut out = self.state.flush();
        let base: Vec<u64> = (0..change.chains)
            .map(|c| self.boundary.get(&c).copied().unwrap_or(0))
            .collect();
        self.state = OrderingState::with_base(change.chains as usize, change.phi(), base, self.state.next_index(), 1)?;
        self.phase = Phase::After;
        for b in std::mem::take(&mut self.buffered) {
            out.extend(self.state.receive_block(&without_removed(&b, change.chains))?);
        }
        Ok(out)
    }
}
