//! Per-height Byzantine agreement with VRF leader election.
//!
//! Each notary member starts a height by gossiping an `Init` carrying its
//! proposal hash and its signature over the public status of the height.
//! That signature doubles as a VRF credential: the member whose signature
//! hashes closest to the epoch's CRS is the leader. Rounds then run on a
//! local clock: pre-commit at 2λ, commit at 4λ, and forward conditions let a
//! node jump ahead as soon as it sees a quorum from a later round.

mod ledger;
mod machine;

use std::fmt;

use num_bigint::BigUint;
use num_traits::float::FloatCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, Digest, KeyPair, PublicKey, Signature};
use crate::{ChainId, NodeId};

pub use ledger::{CommitTally, MessageLedger, Recorded};
pub use machine::{BaMachine, BaParams, Decision, Step};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BaError {
    #[error("no valid init messages")]
    EmptySet,
    #[error("bad signature from {0}")]
    InvalidSignature(NodeId),
    #[error("{0} is not in the notary set")]
    NotMember(NodeId),
    #[error("message for another chain or height")]
    WrongInstance,
    #[error("malformed message: {0}")]
    Malformed(&'static str),
}

/// A value agreed on per height.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BaValue {
    Block(Digest),
    /// No block; settles the height with the empty block.
    Bottom,
    /// Commit-phase marker for "no pre-commit quorum seen".
    Skip,
}

impl BaValue {
    fn encode(&self) -> [u8; 32] {
        match self {
            BaValue::Block(d) => d.0,
            BaValue::Bottom => [0u8; 32],
            BaValue::Skip => [0xffu8; 32],
        }
    }

    fn decode(bytes: &[u8]) -> BaValue {
        let d = Digest(bytes.try_into().expect("32 bytes"));
        match d {
            Digest::ZERO => BaValue::Bottom,
            Digest::MAX => BaValue::Skip,
            d => BaValue::Block(d),
        }
    }
}

impl fmt::Debug for BaValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaValue::Block(d) => write!(f, "Block({})", d.short()),
            BaValue::Bottom => f.write_str("⊥"),
            BaValue::Skip => f.write_str("Skip"),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum MessageKind {
    Init,
    PreCommit,
    Commit,
}

impl MessageKind {
    fn tag(self) -> u8 {
        match self {
            MessageKind::Init => 1,
            MessageKind::PreCommit => 2,
            MessageKind::Commit => 3,
        }
    }

    fn from_tag(t: u8) -> Option<MessageKind> {
        match t {
            1 => Some(MessageKind::Init),
            2 => Some(MessageKind::PreCommit),
            3 => Some(MessageKind::Commit),
            _ => None,
        }
    }
}

/// One agreement message. `Init` carries round 0 and a signature over the
/// height's status; the other kinds are signed over their own body.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct BaMessage {
    pub kind: MessageKind,
    pub chain: ChainId,
    pub height: u64,
    pub round: u64,
    pub value: BaValue,
    pub sender: NodeId,
    pub signature: Signature,
}

const BODY_LEN: usize = 1 + 4 + 8 + 8 + 32 + 8;
pub const ENCODED_LEN: usize = BODY_LEN + 32;

impl BaMessage {
    /// Builds and signs a message. For `Init`, `status` is what gets signed.
    pub fn signed(
        keys: &KeyPair,
        kind: MessageKind,
        chain: ChainId,
        height: u64,
        round: u64,
        value: BaValue,
        status: &[u8],
    ) -> BaMessage {
        let mut m = BaMessage {
            kind,
            chain,
            height,
            round,
            value,
            sender: keys.public.node,
            signature: Signature { signer: keys.public.node, message_digest: Digest::ZERO, tag: Digest::ZERO },
        };
        m.signature = match kind {
            MessageKind::Init => crypto::sign(keys, status),
            _ => crypto::sign(keys, &m.body()),
        };
        m
    }

    /// Everything but the signature tag, in wire order.
    pub fn body(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(ENCODED_LEN);
        out.push(self.kind.tag());
        out.extend_from_slice(&self.chain.to_be_bytes());
        out.extend_from_slice(&self.height.to_be_bytes());
        out.extend_from_slice(&self.round.to_be_bytes());
        out.extend_from_slice(&self.value.encode());
        out.extend_from_slice(&self.sender.0.to_be_bytes());
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.body();
        out.extend_from_slice(&self.signature.tag.0);
        out
    }

    /// Parses the wire form. The signed digest is rebuilt from the body (or
    /// from `status` for `Init`), so a tampered body fails verification.
    pub fn decode(bytes: &[u8], status: &[u8]) -> Result<BaMessage, BaError> {
        if bytes.len() != ENCODED_LEN {
            return Err(BaError::Malformed("length"));
        }
        let kind = MessageKind::from_tag(bytes[0]).ok_or(BaError::Malformed("kind"))?;
        let u32_at = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_be_bytes(bytes[i..i + 8].try_into().unwrap());
        let sender = NodeId(u64_at(53));
        let signed = match kind {
            MessageKind::Init => crypto::hash(status),
            _ => crypto::hash(&bytes[..BODY_LEN]),
        };
        Ok(BaMessage {
            kind,
            chain: u32_at(1),
            height: u64_at(5),
            round: u64_at(13),
            value: BaValue::decode(&bytes[21..53]),
            sender,
            signature: Signature {
                signer: sender,
                message_digest: signed,
                tag: Digest(bytes[BODY_LEN..].try_into().unwrap()),
            },
        })
    }

    /// Identity used for gossip deduplication.
    pub fn digest(&self) -> Digest {
        crypto::hash(&self.encode())
    }

    pub fn verify(&self, pk: &PublicKey, status: &[u8]) -> bool {
        if pk.node != self.sender {
            return false;
        }
        match self.kind {
            MessageKind::Init => crypto::verify(pk, status, &self.signature),
            _ => crypto::verify(pk, &self.body(), &self.signature),
        }
    }
}

/// Public keys of every node, derived from the run seed.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct KeyDirectory {
    seed: u64,
}

impl KeyDirectory {
    pub fn new(seed: u64) -> KeyDirectory {
        KeyDirectory { seed }
    }

    pub fn public(&self, node: NodeId) -> PublicKey {
        KeyPair::derive(self.seed, node).public
    }
}

const STATUS_TAG: &[u8] = b"status";

/// Public, predictable description of one height: `"status" ∥ shard ∥
/// chain ∥ height`, big-endian.
pub fn compute_status(shard: u32, chain: ChainId, height: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(STATUS_TAG.len() + 16);
    out.extend_from_slice(STATUS_TAG);
    out.extend_from_slice(&shard.to_be_bytes());
    out.extend_from_slice(&chain.to_be_bytes());
    out.extend_from_slice(&height.to_be_bytes());
    out
}

pub fn parse_status(bytes: &[u8]) -> Option<(u32, ChainId, u64)> {
    let rest = bytes.strip_prefix(STATUS_TAG)?;
    if rest.len() != 16 {
        return None;
    }
    Some((
        u32::from_be_bytes(rest[0..4].try_into().ok()?),
        u32::from_be_bytes(rest[4..8].try_into().ok()?),
        u64::from_be_bytes(rest[8..16].try_into().ok()?),
    ))
}

/// The sender whose credential lands closest to the CRS; ties go to the
/// smaller id.
pub fn elect_leader<'a>(
    inits: impl IntoIterator<Item = (NodeId, &'a Signature)>,
    crs: &Digest,
) -> Result<NodeId, BaError> {
    inits
        .into_iter()
        .map(|(node, sig)| (crypto::vrf_distance(crs, sig), node))
        .min()
        .map(|(_, node)| node)
        .ok_or(BaError::EmptySet)
}

/// `floor(delta · 2^256)`, exact for any `f64` in `(0, 1]`.
pub fn propose_threshold(delta: f64) -> BigUint {
    assert!(delta > 0.0 && delta <= 1.0, "delta must lie in (0, 1]");
    let (mantissa, exponent, _) = FloatCore::integer_decode(delta);
    let shift = 256 + exponent as i32;
    let m = BigUint::from(mantissa);
    if shift >= 0 {
        m << shift as u32
    } else {
        m >> (-shift) as u32
    }
}

/// Whether a node's credential for `status` falls within `delta · 2^256`
/// of the CRS.
pub fn should_propose(keys: &KeyPair, status: &[u8], crs: &Digest, delta: f64) -> bool {
    if delta >= 1.0 {
        return true;
    }
    let sig = crypto::sign(keys, status);
    let d = BigUint::from_bytes_be(&crypto::vrf_distance(crs, &sig).0);
    d <= propose_threshold(delta)
}
