//! Per-chain lifecycle: propose or abstain, settle a height from the
//! agreement outcome, and notarize blocks and compaction entries.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::ba::{should_propose, BaValue};
use crate::crypto::{
    self, combine, share_sign, verify_threshold, Digest, GroupId, GroupPublicKey, KeyPair, ShareSignature,
    ThresholdError, ThresholdGroup, ThresholdSignature,
};
use crate::lattice::{AckField, Block, CompactionConfirmation, CompactionEntry, Payload};
use crate::ordering::ConfigChange;
use crate::{max_faulty, ChainId, NodeId, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("no notarization for block {height} of chain {chain}")]
    MissingParentNotarization { chain: ChainId, height: u64 },
    #[error("decided block {0} has not been received")]
    UnknownDecidedBlock(Digest),
    #[error("decided block {0} belongs to another slot")]
    WrongSlot(Digest),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
}

/// Whether transaction `tx` may be packed on `chain`.
pub fn load_balancer_admit(tx: &Digest, chain: ChainId, n_chains: u32) -> bool {
    assert!(chain < n_chains, "chain {chain} out of range");
    tx.mod_u64(n_chains as u64) == chain as u64
}

/// Chain count over time, and the chain each transaction belongs to.
///
/// A transaction stays on the chain its digest mapped to when it arrived,
/// as long as that chain exists; otherwise it moves under the current
/// count. A change of chain count therefore never gives one transaction
/// two homes.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct LoadBalancer {
    initial: u32,
    change: Option<ConfigChange>,
}

impl LoadBalancer {
    pub fn fixed(chains: u32) -> LoadBalancer {
        LoadBalancer { initial: chains, change: None }
    }

    pub fn with_change(initial: u32, change: Option<ConfigChange>) -> LoadBalancer {
        LoadBalancer { initial, change }
    }

    pub fn chains_at(&self, t: SimTime) -> u32 {
        match self.change {
            Some(c) if t >= c.time => c.chains,
            _ => self.initial,
        }
    }

    /// Chain that packs `tx`, arrived at `arrival`, in a block stamped `at`.
    pub fn home(&self, tx: &Digest, arrival: SimTime, at: SimTime) -> ChainId {
        let first = tx.mod_u64(self.chains_at(arrival) as u64) as ChainId;
        let now = self.chains_at(at);
        if first < now {
            first
        } else {
            tx.mod_u64(now as u64) as ChainId
        }
    }
}

/// The `(size, t_max + 1)` notary group of `chain` in `epoch`.
pub fn notary_group(seed: u64, epoch: u64, chain: ChainId, size: usize) -> ThresholdGroup {
    ThresholdGroup::setup(seed, GroupId::notary(epoch, chain), size, max_faulty(size) + 1)
}

/// Transactions known to a node, in arrival order.
#[derive(Clone, Debug, Default)]
pub struct Mempool {
    arrivals: BTreeMap<(SimTime, Digest), ()>,
    committed: HashSet<Digest>,
}

impl Mempool {
    pub fn new() -> Mempool {
        Mempool::default()
    }

    pub fn inject(&mut self, at: SimTime, tx: Digest) {
        self.arrivals.insert((at, tx), ());
    }

    /// Marks transactions as packed in a settled block.
    pub fn commit(&mut self, txs: &[Digest]) {
        self.committed.extend(txs.iter().copied());
    }

    pub fn is_committed(&self, tx: &Digest) -> bool {
        self.committed.contains(tx)
    }

    /// Up to `limit` uncommitted transactions that arrived by `now` and
    /// belong to `chain` in a block stamped `now`.
    pub fn select(&self, chain: ChainId, balancer: &LoadBalancer, now: SimTime, limit: usize) -> Vec<Digest> {
        self.arrivals
            .keys()
            .take_while(|(at, _)| *at <= now)
            .filter(|(at, tx)| !self.committed.contains(tx) && balancer.home(tx, *at, now) == chain)
            .map(|(_, tx)| *tx)
            .take(limit)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }
}

/// What a proposer knows when building block `height` of `chain`.
#[derive(Clone, Debug)]
pub struct HeightContext<'a> {
    pub chain: ChainId,
    pub height: u64,
    pub epoch: u64,
    pub parent: Option<&'a Block>,
    pub parent_notarization: Option<ThresholdSignature>,
    /// Latest notarized block of each other chain.
    pub acked: Vec<&'a Block>,
    pub now: SimTime,
}

impl HeightContext<'_> {
    fn check_parent(&self) -> Result<(), ChainError> {
        if self.parent.is_some() && self.parent_notarization.is_none() {
            return Err(ChainError::MissingParentNotarization {
                chain: self.chain,
                height: self.height - 1,
            });
        }
        Ok(())
    }

    /// Never earlier than the parent or any acked block.
    fn timestamp(&self) -> SimTime {
        let parent = self.parent.map_or(0, |p| p.timestamp + 1);
        let acked = self.acked.iter().map(|b| b.timestamp).max().unwrap_or(0);
        self.now.max(parent).max(acked)
    }
}

/// Builds the block `proposer` would offer for the height.
pub fn build_proposal(
    ctx: &HeightContext<'_>,
    proposer: NodeId,
    transactions: Vec<Digest>,
    confirmations: Vec<CompactionConfirmation>,
) -> Result<Block, ChainError> {
    ctx.check_parent()?;
    let acks = ctx
        .acked
        .iter()
        .filter(|b| b.chain != ctx.chain)
        .map(|b| AckField { chain: b.chain, hash: b.hash, height: b.height })
        .collect();
    Ok(Block::new(
        ctx.chain,
        ctx.height,
        ctx.epoch,
        proposer,
        ctx.parent.map(|p| p.hash),
        acks,
        Payload { transactions, confirmations },
        ctx.timestamp(),
        ctx.parent_notarization,
    ))
}

/// Proposal knobs for one node.
#[derive(Clone, Copy, Debug)]
pub struct ProposeParams<'a> {
    pub status: &'a [u8],
    pub crs: &'a Digest,
    pub delta: f64,
    pub balancer: LoadBalancer,
    pub max_transactions: usize,
}

/// A proposal if the node's credential passes the δ threshold.
pub fn propose_or_abstain(
    ctx: &HeightContext<'_>,
    keys: &KeyPair,
    params: ProposeParams<'_>,
    mempool: &Mempool,
    confirmations: Vec<CompactionConfirmation>,
) -> Result<Option<Block>, ChainError> {
    ctx.check_parent()?;
    if !should_propose(keys, params.status, params.crs, params.delta) {
        return Ok(None);
    }
    let txs = mempool.select(ctx.chain, &params.balancer, ctx.timestamp(), params.max_transactions);
    build_proposal(ctx, keys.public.node, txs, confirmations).map(Some)
}

/// The block that settles a height once agreement has decided `value`.
/// `lookup` finds received proposal bodies by hash.
pub fn decide_height(
    ctx: &HeightContext<'_>,
    value: BaValue,
    genesis_time: SimTime,
    lookup: impl Fn(&Digest) -> Option<Block>,
) -> Result<Block, ChainError> {
    match value {
        BaValue::Block(h) => {
            let b = lookup(&h).ok_or(ChainError::UnknownDecidedBlock(h))?;
            if b.chain != ctx.chain || b.height != ctx.height || b.parent != ctx.parent.map(|p| p.hash) {
                return Err(ChainError::WrongSlot(h));
            }
            Ok(b)
        }
        BaValue::Bottom | BaValue::Skip => {
            ctx.check_parent()?;
            let parent_ts = ctx.parent.map_or(genesis_time, |p| p.timestamp);
            Ok(Block::empty(
                ctx.chain,
                ctx.height,
                ctx.epoch,
                ctx.parent.map(|p| p.hash),
                parent_ts,
                ctx.parent_notarization,
            ))
        }
    }
}

/// A notary member's share over a settled block.
pub fn notarization_share(group: &ThresholdGroup, index: usize, block: &Block) -> ShareSignature {
    share_sign(index as u32, &group.share_secret(index), &block.hash.0)
}

/// Combines shares into `Σ_h` for `block`.
pub fn notarize(group: &GroupPublicKey, block: &Block, shares: &[ShareSignature]) -> Result<ThresholdSignature, ChainError> {
    Ok(combine(group, &block.hash.0, shares, group.threshold)?)
}

/// Checks `sig` against the block's recomputed hash, so any altered byte
/// fails.
pub fn verify_notarization(group: &GroupPublicKey, block: &Block, sig: &ThresholdSignature) -> bool {
    verify_threshold(group, &block.compute_hash().0, sig)
}

pub fn compaction_share(group: &ThresholdGroup, index: usize, entry: &CompactionEntry) -> ShareSignature {
    share_sign(index as u32, &group.share_secret(index), &entry.encode())
}

pub fn notarize_compaction(
    group: &GroupPublicKey,
    entry: &CompactionEntry,
    shares: &[ShareSignature],
) -> Result<ThresholdSignature, ChainError> {
    Ok(combine(group, &entry.encode(), shares, group.threshold)?)
}

pub fn verify_compaction(group: &GroupPublicKey, confirmation: &CompactionConfirmation) -> bool {
    verify_threshold(group, &confirmation.entry.encode(), &confirmation.signature)
}

/// Digest of the `i`-th injected transaction of a run.
pub fn transaction_digest(seed: u64, i: u64) -> Digest {
    crypto::hash_parts(&[b"tx", &seed.to_be_bytes(), &i.to_be_bytes()])
}
