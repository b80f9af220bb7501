//! Common reference string chain and committee election.
//!
//! Each epoch `i` has randomness `R_i`. The CRS committee of epoch `i`
//! threshold-signs `R_i`, and the hash of that signature is `R_{i+1}`.
//! Committees for an epoch are prefixes of seeded Fisher–Yates shuffles of
//! the node set, one independent shuffle per role.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{
    combine, hash_parts, share_sign, Digest, GroupId, ShareSignature, ThresholdError,
    ThresholdGroup,
};
use crate::{max_faulty, ChainId, NodeId};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct CrsValue {
    pub epoch: u64,
    pub value: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CrsError {
    #[error("committee of {requested} requested from {available} nodes")]
    CommitteeTooLarge { requested: usize, available: usize },
    #[error("committee size must be positive")]
    EmptyCommittee,
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
}

/// Derives `R_{i+1}` from the CRS committee's shares over `R_i`.
pub fn next_crs(
    current: &CrsValue,
    group: &crate::crypto::GroupPublicKey,
    shares: &[ShareSignature],
    t: usize,
) -> Result<CrsValue, CrsError> {
    let sig = combine(group, &current.value.0, shares, t)?;
    Ok(CrsValue {
        epoch: current.epoch + 1,
        value: crate::crypto::hash(&sig.tag.0),
    })
}

/// Uniform index in `[0, bound)` from draw `k` of the seed, by rejection.
fn draw_below(seed: &Digest, counter: &mut u64, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let d = hash_parts(&[&seed.0, &counter.to_be_bytes()]);
        *counter += 1;
        let mut word = [0u8; 8];
        word.copy_from_slice(&d.0[..8]);
        let x = u64::from_be_bytes(word);
        if x < zone {
            return x % bound;
        }
    }
}

/// Deterministic Fisher–Yates shuffle keyed by `seed`.
pub fn fisher_yates_shuffle<T: Clone>(seed: &Digest, items: &[T]) -> Vec<T> {
    let mut out = items.to_vec();
    let mut counter = 0u64;
    for i in (1..out.len()).rev() {
        let j = draw_below(seed, &mut counter, i as u64 + 1) as usize;
        out.swap(i, j);
    }
    out
}

fn crs_shuffle_seed(r: &Digest) -> Digest {
    hash_parts(&[b"crs", &r.0])
}

fn notary_shuffle_seed(r: &Digest, chain: ChainId) -> Digest {
    hash_parts(&[b"notary", &chain.to_be_bytes(), &r.0])
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct CommitteeSizes {
    pub crs: usize,
    pub notary: usize,
    pub chains: u32,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct EpochConfig {
    pub epoch: u64,
    pub crs: Digest,
    pub crs_committee: Vec<NodeId>,
    pub notary_committees: Vec<Vec<NodeId>>,
    pub node_set: Vec<NodeId>,
}

impl EpochConfig {
    pub fn notary(&self, chain: ChainId) -> &[NodeId] {
        &self.notary_committees[chain as usize]
    }
}

fn take_prefix(seed: &Digest, nodes: &[NodeId], k: usize) -> Result<Vec<NodeId>, CrsError> {
    if k == 0 {
        return Err(CrsError::EmptyCommittee);
    }
    if k > nodes.len() {
        return Err(CrsError::CommitteeTooLarge { requested: k, available: nodes.len() });
    }
    let mut v = fisher_yates_shuffle(seed, nodes);
    v.truncate(k);
    Ok(v)
}

/// Elects the CRS committee and one notary committee per chain.
pub fn elect_committees(
    r: &CrsValue,
    node_set: &[NodeId],
    sizes: CommitteeSizes,
) -> Result<EpochConfig, CrsError> {
    let crs_committee = take_prefix(&crs_shuffle_seed(&r.value), node_set, sizes.crs)?;
    let notary_committees = (0..sizes.chains)
        .map(|j| take_prefix(&notary_shuffle_seed(&r.value, j), node_set, sizes.notary))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EpochConfig {
        epoch: r.epoch,
        crs: r.value,
        crs_committee,
        notary_committees,
        node_set: node_set.to_vec(),
    })
}

/// Randomness of epoch 0.
pub fn genesis_crs(seed: u64) -> CrsValue {
    CrsValue {
        epoch: 0,
        value: hash_parts(&[b"genesis", &seed.to_be_bytes()]),
    }
}

/// Threshold group of the CRS committee of `epoch`.
pub fn crs_group(seed: u64, epoch: u64, size: usize) -> ThresholdGroup {
    ThresholdGroup::setup(seed, GroupId::crs(epoch), size, max_faulty(size) + 1)
}

/// Advances the CRS one epoch with shares from the listed committee
/// positions, as the honest members of the committee would.
pub fn advance_with_members(
    seed: u64,
    current: &CrsValue,
    committee_size: usize,
    signers: &[usize],
) -> Result<CrsValue, CrsError> {
    let group = crs_group(seed, current.epoch, committee_size);
    let shares: Vec<ShareSignature> = signers
        .iter()
        .map(|&i| share_sign(i as u32, &group.share_secret(i), &current.value.0))
        .collect();
    next_crs(current, &group.public, &shares, group.public.threshold)
}

/// Scripted node-set change taking effect at an epoch boundary.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct MembershipChange {
    pub epoch: u64,
    pub nodes: Vec<NodeId>,
}

/// Precomputed epoch configurations for a run.
#[derive(Clone, Debug)]
pub struct EpochSchedule {
    pub epochs: Vec<EpochConfig>,
}

impl EpochSchedule {
    /// Builds `count` epochs. `honest` filters which CRS committee members
    /// contribute shares; at least a threshold of them must be honest.
    /// With `update_only_on_join`, the CRS is carried over unchanged when
    /// the node set did not grow.
    pub fn build(
        seed: u64,
        initial_nodes: &[NodeId],
        membership: &[MembershipChange],
        sizes: CommitteeSizes,
        count: u64,
        update_only_on_join: bool,
        honest: impl Fn(NodeId) -> bool,
    ) -> Result<EpochSchedule, CrsError> {
        let mut epochs = Vec::with_capacity(count as usize);
        let mut r = genesis_crs(seed);
        let mut nodes = initial_nodes.to_vec();
        for e in 0..count {
            if e > 0 {
                let prev: &EpochConfig = &epochs[e as usize - 1];
                let joined = membership
                    .iter()
                    .find(|m| m.epoch == e)
                    .is_some_and(|m| m.nodes.iter().any(|n| !prev.node_set.contains(n)));
                if !update_only_on_join || joined {
                    let signers: Vec<usize> = prev
                        .crs_committee
                        .iter()
                        .enumerate()
                        .filter(|(_, n)| honest(**n))
                        .map(|(i, _)| i)
                        .collect();
                    r = advance_with_members(seed, &r, prev.crs_committee.len(), &signers)?;
                } else {
                    r = CrsValue { epoch: e, value: r.value };
                }
            }
            if let Some(m) = membership.iter().find(|m| m.epoch == e) {
                nodes = m.nodes.clone();
            }
            epochs.push(elect_committees(&r, &nodes, sizes)?);
        }
        Ok(EpochSchedule { epochs })
    }

    pub fn epoch(&self, e: u64) -> &EpochConfig {
        let last = self.epochs.len() - 1;
        &self.epochs[(e as usize).min(last)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes(n: u64) -> Vec<NodeId> {
        (0..n).map(NodeId).collect()
    }

    #[test]
    fn single_item_shuffle() {
        assert_eq!(fisher_yates_shuffle(&Digest::from_u64(1), &[9]), vec![9]);
    }

    #[test]
    fn shuffle_is_a_deterministic_permutation() {
        let seed = crate::crypto::hash(b"s");
        let a = fisher_yates_shuffle(&seed, &nodes(20));
        assert_eq!(a, fisher_yates_shuffle(&seed, &nodes(20)));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, nodes(20));
    }

    #[test]
    fn shuffle_position_zero_is_uniform() {
        let mut hits = [0u32; 4];
        for s in 0..10_000u64 {
            let out = fisher_yates_shuffle(&Digest::from_u64(s), &[0usize, 1, 2, 3]);
            hits[out[0]] += 1;
        }
        for h in hits {
            let freq = h as f64 / 10_000.0;
            assert!((freq - 0.25).abs() < 0.02, "frequency {freq}");
        }
    }

    #[test]
    fn next_crs_is_subset_independent() {
        let r = genesis_crs(5);
        let a = advance_with_members(5, &r, 4, &[0, 1]).unwrap();
        let b = advance_with_members(5, &r, 4, &[2, 3]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.epoch, 1);
    }

    #[test]
    fn next_crs_rejects_wrong_message() {
        let r = genesis_crs(5);
        let group = crs_group(5, 0, 4);
        let shares: Vec<_> = (0..2)
            .map(|i| share_sign(i, &group.share_secret(i as usize), b"wrong"))
            .collect();
        assert!(matches!(
            next_crs(&r, &group.public, &shares, 2),
            Err(CrsError::Threshold(ThresholdError::InvalidShare { .. }))
        ));
    }

    #[test]
    fn crs_chain_replays() {
        let run = || {
            let mut r = genesis_crs(11);
            let mut out = vec![];
            for _ in 0..3 {
                r = advance_with_members(11, &r, 4, &[0, 1, 2]).unwrap();
                out.push(r.value);
            }
            out
        };
        let a = run();
        assert_eq!(a, run());
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn full_size_committees_are_permutations() {
        let sizes = CommitteeSizes { crs: 7, notary: 7, chains: 2 };
        let cfg = elect_committees(&genesis_crs(1), &nodes(7), sizes).unwrap();
        let mut c = cfg.crs_committee.clone();
        c.sort();
        assert_eq!(c, nodes(7));
        for n in &cfg.notary_committees {
            let mut n = n.clone();
            n.sort();
            assert_eq!(n, nodes(7));
        }
    }

    #[test]
    fn chains_get_distinct_notary_sets() {
        let sizes = CommitteeSizes { crs: 4, notary: 4, chains: 2 };
        let cfg = elect_committees(&genesis_crs(3), &nodes(20), sizes).unwrap();
        assert_ne!(cfg.notary(0), cfg.notary(1));
    }

    #[test]
    fn oversized_committee_is_rejected() {
        let sizes = CommitteeSizes { crs: 5, notary: 2, chains: 1 };
        assert_eq!(
            elect_committees(&genesis_crs(3), &nodes(4), sizes),
            Err(CrsError::CommitteeTooLarge { requested: 5, available: 4 })
        );
    }

    #[test]
    fn schedule_switches_membership_and_can_freeze_crs() {
        let sizes = CommitteeSizes { crs: 4, notary: 4, chains: 1 };
        let change = [MembershipChange { epoch: 2, nodes: (0..6).map(NodeId).collect() }];
        let s = EpochSchedule::build(9, &nodes(5), &change, sizes, 3, true, |_| true).unwrap();
        assert_eq!(s.epoch(1).crs, s.epoch(0).crs);
        assert_ne!(s.epoch(2).crs, s.epoch(1).crs);
        assert_eq!(s.epoch(2).node_set.len(), 6);
        let moving = EpochSchedule::build(9, &nodes(5), &[], sizes, 3, false, |_| true).unwrap();
        assert_ne!(moving.epoch(1).crs, moving.epoch(0).crs);
    }

    #[test]
    fn committee_byzantine_counts_match_hypergeometric() {
        use crate::analysis::hypergeometric_pmf;
        let population: Vec<NodeId> = nodes(40);
        let byzantine = |n: &NodeId| n.0 < 10;
        let m = 7;
        let trials = 20_000u64;
        let mut counts = vec![0u64; m + 1];
        for s in 0..trials {
            let r = CrsValue { epoch: 0, value: Digest::from_u64(s) };
            let cfg = elect_committees(&r, &population, CommitteeSizes { crs: 1, notary: m, chains: 2 })
                .unwrap();
            let x = cfg.notary(1).iter().filter(|n| byzantine(n)).count();
            counts[x] += 1;
        }
        for (x, c) in counts.iter().enumerate() {
            let expected = hypergeometric_pmf(40, 10, m as u64, x as u64);
            let got = *c as f64 / trials as f64;
            assert!((got - expected).abs() < 0.02, "x={x}: {got} vs {expected}");
        }
    }
}
