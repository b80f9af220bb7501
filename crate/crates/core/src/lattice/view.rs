use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use thiserror::Error;

use super::block::Block;
use crate::crypto::{verify_threshold, Digest, GroupPublicKey};
use crate::ChainId;

/// Looks up the notary group that signs a chain's blocks in an epoch.
pub trait NotaryDirectory: Send + Sync {
    fn notary_group(&self, chain: ChainId, epoch: u64) -> Option<GroupPublicKey>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    BadHash,
    HeightGap,
    DuplicateAckChain(ChainId),
    SelfAck,
    AckMismatch(ChainId),
    AckRegression(ChainId),
    BadNotarization,
    Fork { existing: Digest },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validation {
    Accept,
    Defer(Vec<Digest>),
    Reject(RejectReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LatticeError {
    #[error("block {0} already known")]
    DuplicateBlock(Digest),
    #[error("block rejected: {0:?}")]
    Rejected(RejectReason),
    #[error("unknown block {0}")]
    UnknownBlock(Digest),
}

/// A node's causal view of the lattice.
///
/// Blocks are released to the caller only once their parent and every
/// acked block have been released, in a deterministic order.
#[derive(Clone, Default)]
pub struct LatticeView {
    blocks: HashMap<Digest, Block>,
    chains: BTreeMap<ChainId, Vec<Digest>>,
    deferred: HashMap<Digest, Block>,
    waiting_on: HashMap<Digest, Vec<Digest>>,
    notaries: Option<Arc<dyn NotaryDirectory>>,
}

impl std::fmt::Debug for LatticeView {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LatticeView")
            .field("blocks", &self.blocks.len())
            .field("deferred", &self.deferred.len())
            .finish()
    }
}

impl PartialEq for LatticeView {
    fn eq(&self, other: &Self) -> bool {
        self.chains == other.chains && self.deferred.keys().collect::<HashSet<_>>() == other.deferred.keys().collect()
    }
}

impl LatticeView {
    /// A view that does not check parent notarizations (fixtures, replay).
    pub fn new() -> LatticeView {
        LatticeView::default()
    }

    pub fn with_notaries(notaries: Arc<dyn NotaryDirectory>) -> LatticeView {
        LatticeView { notaries: Some(notaries), ..LatticeView::default() }
    }

    pub fn get(&self, hash: &Digest) -> Option<&Block> {
        self.blocks.get(hash)
    }

    pub fn contains(&self, hash: &Digest) -> bool {
        self.blocks.contains_key(hash)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn deferred_len(&self) -> usize {
        self.deferred.len()
    }

    /// Released blocks of `chain` in height order.
    pub fn chain(&self, chain: ChainId) -> &[Digest] {
        self.chains.get(&chain).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn chain_ids(&self) -> impl Iterator<Item = ChainId> + '_ {
        self.chains.keys().copied()
    }

    pub fn tip(&self, chain: ChainId) -> Option<&Block> {
        self.chain(chain).last().map(|h| &self.blocks[h])
    }

    pub fn at(&self, chain: ChainId, height: u64) -> Option<&Block> {
        self.chain(chain).get(height as usize).map(|h| &self.blocks[h])
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.values()
    }

    /// Structural checks of `block` against what is already released.
    pub fn validate_block(&self, block: &Block) -> Validation {
        if !block.hash_is_valid() {
            return Validation::Reject(RejectReason::BadHash);
        }
        let genesis = block.height == 0;
        let bad_notarization_slot =
            self.notaries.is_some() && genesis != block.parent_notarization.is_none();
        if genesis != block.parent.is_none() || bad_notarization_slot {
            return Validation::Reject(RejectReason::HeightGap);
        }
        let mut seen = BTreeSet::new();
        for a in &block.acks {
            if a.chain == block.chain {
                return Validation::Reject(RejectReason::SelfAck);
            }
            if !seen.insert(a.chain) {
                return Validation::Reject(RejectReason::DuplicateAckChain(a.chain));
            }
        }
        if let Some(existing) = self.at(block.chain, block.height) {
            if existing.hash != block.hash {
                return Validation::Reject(RejectReason::Fork { existing: existing.hash });
            }
        }
        let missing: Vec<Digest> = block
            .references()
            .map(|(_, _, h)| h)
            .filter(|h| !self.blocks.contains_key(h))
            .collect();
        if !missing.is_empty() {
            return Validation::Defer(missing);
        }
        if let Some(parent_hash) = block.parent {
            let parent = &self.blocks[&parent_hash];
            if parent.chain != block.chain || parent.height + 1 != block.height {
                return Validation::Reject(RejectReason::HeightGap);
            }
            if let Some(dir) = &self.notaries {
                let ok = block.parent_notarization.as_ref().is_some_and(|sig| {
                    dir.notary_group(parent.chain, parent.epoch)
                        .is_some_and(|g| verify_threshold(&g, &parent.hash.0, sig))
                });
                if !ok {
                    return Validation::Reject(RejectReason::BadNotarization);
                }
            }
            for a in &block.acks {
                if let Some(prev) = parent.ack_for(a.chain) {
                    if a.height < prev.height {
                        return Validation::Reject(RejectReason::AckRegression(a.chain));
                    }
                }
            }
        }
        for a in &block.acks {
            let target = &self.blocks[&a.hash];
            if target.chain != a.chain || target.height != a.height {
                return Validation::Reject(RejectReason::AckMismatch(a.chain));
            }
        }
        Validation::Accept
    }

    /// Adds `block`, returning every block released by it in causal order.
    pub fn insert_block(&mut self, block: Block) -> Result<Vec<Digest>, LatticeError> {
        if self.blocks.contains_key(&block.hash) || self.deferred.contains_key(&block.hash) {
            return Err(LatticeError::DuplicateBlock(block.hash));
        }
        match self.validate_block(&block) {
            Validation::Reject(r) => Err(LatticeError::Rejected(r)),
            Validation::Defer(missing) => {
                for m in missing {
                    self.waiting_on.entry(m).or_default().push(block.hash);
                }
                self.deferred.insert(block.hash, block);
                Ok(Vec::new())
            }
            Validation::Accept => {
                let mut released = Vec::new();
                let mut ready: BTreeSet<(u64, ChainId, Digest)> = BTreeSet::new();
                ready.insert((block.height, block.chain, block.hash));
                self.deferred.insert(block.hash, block);
                while let Some(key) = ready.pop_first() {
                    let b = self.deferred.remove(&key.2).expect("ready block is deferred");
                    // A deferred block is re-validated now that its references exist.
                    if !matches!(self.validate_block(&b), Validation::Accept) {
                        continue;
                    }
                    let h = b.hash;
                    self.chains.entry(b.chain).or_default().push(h);
                    self.blocks.insert(h, b);
                    released.push(h);
                    for w in self.waiting_on.remove(&h).unwrap_or_default() {
                        if let Some(d) = self.deferred.get(&w) {
                            if d.references().all(|(_, _, r)| self.blocks.contains_key(&r)) {
                                ready.insert((d.height, d.chain, d.hash));
                            }
                        }
                    }
                }
                Ok(released)
            }
        }
    }

    /// Whether `from` reaches `to` through parent and ack edges.
    pub fn indirect_ack(&self, from: &Digest, to: &Digest) -> Result<bool, LatticeError> {
        let start = self.blocks.get(from).ok_or(LatticeError::UnknownBlock(*from))?;
        let target = self.blocks.get(to).ok_or(LatticeError::UnknownBlock(*to))?;
        let mut stack: Vec<&Block> = vec![start];
        let mut seen = HashSet::new();
        while let Some(b) = stack.pop() {
            for (chain, height, h) in b.references() {
                if h == target.hash {
                    return Ok(true);
                }
                // Nothing at or below the target's height on its own chain
                // can lead back up to it, except the target itself.
                if chain == target.chain && height <= target.height {
                    continue;
                }
                if seen.insert(h) {
                    if let Some(next) = self.blocks.get(&h) {
                        stack.push(next);
                    }
                }
            }
        }
        Ok(false)
    }
}
