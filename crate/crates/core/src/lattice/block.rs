use serde::{Deserialize, Serialize};

use crate::crypto::{hash, Digest, ThresholdSignature};
use crate::{ChainId, NodeId, SimTime};

/// Reference from a block to the latest block it knows of another chain.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct AckField {
    pub chain: ChainId,
    pub hash: Digest,
    pub height: u64,
}

/// One entry of the compaction chain, as confirmed by a notary committee.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct CompactionEntry {
    pub height: u64,
    pub consensus_timestamp: SimTime,
    pub block: Digest,
}

impl CompactionEntry {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(56);
        out.extend_from_slice(b"compaction");
        out.extend_from_slice(&self.height.to_be_bytes());
        out.extend_from_slice(&self.consensus_timestamp.to_be_bytes());
        out.extend_from_slice(&self.block.0);
        out
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct CompactionConfirmation {
    pub entry: CompactionEntry,
    /// Epoch of the committee that signed.
    pub epoch: u64,
    pub signature: ThresholdSignature,
}

#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct Payload {
    pub transactions: Vec<Digest>,
    pub confirmations: Vec<CompactionConfirmation>,
}

impl Payload {
    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty() && self.confirmations.is_empty()
    }
}

/// Proposer recorded on the canonical empty block.
pub const EMPTY_PROPOSER: NodeId = NodeId(u64::MAX);

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Block {
    pub chain: ChainId,
    pub height: u64,
    pub epoch: u64,
    pub proposer: NodeId,
    pub parent: Option<Digest>,
    pub acks: Vec<AckField>,
    pub payload: Payload,
    pub timestamp: SimTime,
    pub parent_notarization: Option<ThresholdSignature>,
    pub hash: Digest,
}

fn put_sig(out: &mut Vec<u8>, sig: &Option<ThresholdSignature>) {
    match sig {
        None => out.push(0),
        Some(s) => {
            out.push(1);
            out.extend_from_slice(&s.group_id.0 .0);
            out.extend_from_slice(&s.message_digest.0);
            out.extend_from_slice(&s.tag.0);
        }
    }
}

impl Block {
    /// Builds a block and seals its hash.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        chain: ChainId,
        height: u64,
        epoch: u64,
        proposer: NodeId,
        parent: Option<Digest>,
        mut acks: Vec<AckField>,
        payload: Payload,
        timestamp: SimTime,
        parent_notarization: Option<ThresholdSignature>,
    ) -> Block {
        acks.sort();
        let mut b = Block {
            chain,
            height,
            epoch,
            proposer,
            parent,
            acks,
            payload,
            timestamp,
            parent_notarization,
            hash: Digest::ZERO,
        };
        b.hash = b.compute_hash();
        b
    }

    /// The block every node derives when agreement settles on no proposal.
    /// `parent_timestamp` is the parent's timestamp, or the chain's genesis
    /// time at height 0.
    pub fn empty(
        chain: ChainId,
        height: u64,
        epoch: u64,
        parent: Option<Digest>,
        parent_timestamp: SimTime,
        parent_notarization: Option<ThresholdSignature>,
    ) -> Block {
        Block::new(
            chain,
            height,
            epoch,
            EMPTY_PROPOSER,
            parent,
            Vec::new(),
            Payload::default(),
            parent_timestamp,
            parent_notarization,
        )
    }

    pub fn is_empty_block(&self) -> bool {
        self.proposer == EMPTY_PROPOSER
    }

    /// Canonical bytes of every field except the hash.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(256);
        out.extend_from_slice(b"block");
        out.extend_from_slice(&self.chain.to_be_bytes());
        out.extend_from_slice(&self.height.to_be_bytes());
        out.extend_from_slice(&self.epoch.to_be_bytes());
        out.extend_from_slice(&self.proposer.0.to_be_bytes());
        out.extend_from_slice(&self.parent.unwrap_or(Digest::ZERO).0);
        out.push(self.parent.is_some() as u8);
        out.extend_from_slice(&(self.acks.len() as u32).to_be_bytes());
        for a in &self.acks {
            out.extend_from_slice(&a.chain.to_be_bytes());
            out.extend_from_slice(&a.hash.0);
            out.extend_from_slice(&a.height.to_be_bytes());
        }
        out.extend_from_slice(&(self.payload.transactions.len() as u32).to_be_bytes());
        for t in &self.payload.transactions {
            out.extend_from_slice(&t.0);
        }
        out.extend_from_slice(&(self.payload.confirmations.len() as u32).to_be_bytes());
        for c in &self.payload.confirmations {
            out.extend_from_slice(&c.entry.encode());
            out.extend_from_slice(&c.epoch.to_be_bytes());
            put_sig(&mut out, &Some(c.signature));
        }
        out.extend_from_slice(&self.timestamp.to_be_bytes());
        put_sig(&mut out, &self.parent_notarization);
        out
    }

    pub fn compute_hash(&self) -> Digest {
        hash(&self.encode())
    }

    pub fn hash_is_valid(&self) -> bool {
        self.hash == self.compute_hash()
    }

    pub fn ack_for(&self, chain: ChainId) -> Option<&AckField> {
        self.acks.iter().find(|a| a.chain == chain)
    }

    /// Parent link followed by acks: every block this one directly refers to.
    pub fn references(&self) -> impl Iterator<Item = (ChainId, u64, Digest)> + '_ {
        let parent = self.parent.map(|p| (self.chain, self.height - 1, p));
        parent.into_iter().chain(self.acks.iter().map(|a| (a.chain, a.height, a.hash)))
    }
}
