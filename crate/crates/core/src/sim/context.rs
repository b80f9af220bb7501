use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::SimError;
use crate::ba::{compute_status, BaMessage, KeyDirectory};
use crate::chain::notary_group;
use crate::crs::{CommitteeSizes, EpochConfig, EpochSchedule, MembershipChange};
use crate::crypto::{hash_parts, Digest, GroupPublicKey, ShareSignature, ThresholdGroup};
use crate::lattice::{Block, CompactionEntry, NotaryDirectory};
use crate::ordering::ConfigChange;
use crate::{max_faulty, ChainId, NodeId, SimTime};

/// Shard number written into every status; one shard per run.
pub const SHARD: u32 = 0;

/// Read-only facts every node of a run agrees on.
#[derive(Debug)]
pub struct Registry {
    pub seed: u64,
    pub lambda: SimTime,
    pub delta: f64,
    pub initial_chains: u32,
    pub max_chains: u32,
    pub phi: usize,
    pub change: Option<ConfigChange>,
    pub epoch_length: u64,
    pub notary_size: usize,
    pub monotone: bool,
    pub max_transactions: usize,
    pub directory: KeyDirectory,
    schedule: EpochSchedule,
    groups: Vec<OnceLock<ThresholdGroup>>,
}

impl Registry {
    pub fn new(sc: &Scenario) -> Result<Registry, SimError> {
        let lambda = sc.lambda();
        // Heights can run well past the target while slow nodes catch up;
        // no chain settles faster than one height per 2λ.
        let max_height = sc.horizon() / (2 * lambda) + sc.heights + 2;
        let epochs = max_height / sc.epoch_length + 2;
        let membership: Vec<MembershipChange> = sc
            .membership
            .iter()
            .map(|m| MembershipChange { epoch: m.epoch, nodes: m.nodes.iter().copied().map(NodeId).collect() })
            .collect();
        let sizes = CommitteeSizes { crs: sc.crs_size(), notary: sc.notary_size(), chains: sc.max_chains() };
        let schedule = EpochSchedule::build(
            sc.seed,
            &sc.initial_set(),
            &membership,
            sizes,
            epochs,
            sc.update_crs_only_on_join,
            |n| !sc.is_byzantine(n),
        )
        .map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;
        let groups = (0..epochs * sc.max_chains() as u64).map(|_| OnceLock::new()).collect();
        Ok(Registry {
            seed: sc.seed,
            lambda,
            delta: sc.delta,
            initial_chains: sc.chains,
            max_chains: sc.max_chains(),
            phi: sc.phi(),
            change: sc.config_change(),
            epoch_length: sc.epoch_length,
            notary_size: sc.notary_size(),
            monotone: sc.monotone_timestamps,
            max_transactions: sc.max_transactions,
            directory: KeyDirectory::new(sc.seed),
            schedule,
            groups,
        })
    }

    pub fn epoch_count(&self) -> u64 {
        self.schedule.epochs.len() as u64
    }

    /// Epoch of block `height`, capped at the last precomputed epoch.
    pub fn epoch_of(&self, height: u64) -> u64 {
        (height / self.epoch_length).min(self.epoch_count() - 1)
    }

    pub fn config(&self, epoch: u64) -> &EpochConfig {
        self.schedule.epoch(epoch)
    }

    pub fn notary(&self, chain: ChainId, epoch: u64) -> &[NodeId] {
        self.config(epoch).notary(chain)
    }

    pub fn member_index(&self, chain: ChainId, epoch: u64, node: NodeId) -> Option<usize> {
        self.notary(chain, epoch).iter().position(|n| *n == node)
    }

    pub fn quorum(&self) -> usize {
        2 * max_faulty(self.notary_size) + 1
    }

    pub fn group(&self, epoch: u64, chain: ChainId) -> &ThresholdGroup {
        let epoch = epoch.min(self.epoch_count() - 1);
        self.groups[(epoch * self.max_chains as u64 + chain as u64) as usize]
            .get_or_init(|| notary_group(self.seed, epoch, chain, self.notary_size))
    }

    pub fn status(&self, chain: ChainId, height: u64) -> Vec<u8> {
        compute_status(SHARD, chain, height)
    }

    /// Time at which `chain` produces its first block.
    pub fn chain_start(&self, chain: ChainId) -> SimTime {
        match self.change {
            Some(c) if chain >= self.initial_chains => c.time,
            _ => 0,
        }
    }

    /// Chains whose heights the run has to reach.
    pub fn required_chains(&self) -> Vec<ChainId> {
        let last = self.change.map_or(self.initial_chains, |c| c.chains);
        (0..self.initial_chains.max(last)).collect()
    }
}

/// Shared handle used as the lattice's notary directory.
#[derive(Clone, Debug)]
pub struct SharedRegistry(pub Arc<Registry>);

impl NotaryDirectory for SharedRegistry {
    fn notary_group(&self, chain: ChainId, epoch: u64) -> Option<GroupPublicKey> {
        (chain < self.0.max_chains).then(|| self.0.group(epoch, chain).public.clone())
    }
}

/// Everything nodes gossip.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub enum Payload {
    Ba(BaMessage),
    /// A proposal body, gossiped alongside its `Init`.
    Proposal(Block),
    /// A notary member's share over the block it settled.
    Share { chain: ChainId, height: u64, block: Digest, share: ShareSignature },
    /// A chain-0 notary member's share over a compaction entry.
    Compaction { entry: CompactionEntry, epoch: u64, share: ShareSignature },
}

impl Payload {
    /// Identity for duplicate suppression.
    pub fn digest(&self) -> Digest {
        match self {
            Payload::Ba(m) => m.digest(),
            Payload::Proposal(b) => hash_parts(&[b"proposal", &b.hash.0]),
            Payload::Share { chain, height, block, share } => hash_parts(&[
                b"share",
                &chain.to_be_bytes(),
                &height.to_be_bytes(),
                &block.0,
                &share.share_index.to_be_bytes(),
                &share.tag.0,
            ]),
            Payload::Compaction { entry, epoch, share } => hash_parts(&[
                b"compaction",
                &entry.encode(),
                &epoch.to_be_bytes(),
                &share.share_index.to_be_bytes(),
                &share.tag.0,
            ]),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Ba(_) => "ba",
            Payload::Proposal(_) => "proposal",
            Payload::Share { .. } => "share",
            Payload::Compaction { .. } => "compaction",
        }
    }
}

/// A payload in flight, with its digest computed once at the origin.
#[derive(Clone, Debug)]
pub struct Envelope {
    pub digest: Digest,
    pub origin: NodeId,
    pub payload: Arc<Payload>,
}

impl Envelope {
    pub fn new(origin: NodeId, payload: Payload) -> Envelope {
        Envelope { digest: payload.digest(), origin, payload: Arc::new(payload) }
    }
}
