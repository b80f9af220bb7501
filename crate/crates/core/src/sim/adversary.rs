use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::context::{Payload, Registry};
use super::node::CorrectNode;
use super::scenario::{Behavior, Scenario};
use crate::ba::{should_propose, BaMessage, BaValue, MessageKind};
use crate::chain::{build_proposal, HeightContext};
use crate::crypto::{self, Digest, KeyPair};
use crate::lattice::Block;
use crate::{ChainId, NodeId, SimTime};

/// Drives every Byzantine node of a run.
///
/// Byzantine nodes never vote through the normal path; whatever they send
/// comes from the two hooks below. Values they propose are real, well-formed
/// blocks, so a hash they push through agreement always has a body.
pub struct Adversary {
    behavior: Behavior,
    byzantine: BTreeSet<NodeId>,
    reg: Arc<Registry>,
    keys: HashMap<NodeId, KeyPair>,
    /// Correct nodes receiving the "X" side of a split.
    first_half: BTreeSet<NodeId>,
    started: HashSet<(ChainId, u64)>,
    hooked: HashSet<(NodeId, ChainId, u64, u64)>,
    rankings: HashMap<(ChainId, u64), Vec<NodeId>>,
    rng: ChaCha8Rng,
}

impl Adversary {
    pub fn new(sc: &Scenario, reg: Arc<Registry>) -> Adversary {
        let byzantine: BTreeSet<NodeId> = sc.adversary.byzantine.iter().copied().map(NodeId).collect();
        let keys = byzantine.iter().map(|n| (*n, KeyPair::derive(sc.seed, *n))).collect();
        let correct: Vec<NodeId> = (0..sc.nodes as u64).map(NodeId).filter(|n| !byzantine.contains(n)).collect();
        let first_half = correct[..correct.len().div_ceil(2)].iter().copied().collect();
        Adversary {
            behavior: sc.adversary.behavior,
            byzantine,
            reg,
            keys,
            first_half,
            started: HashSet::new(),
            hooked: HashSet::new(),
            rankings: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(sc.seed ^ 0xad5e_7a11),
        }
    }

    fn members(&self, chain: ChainId, height: u64) -> Vec<NodeId> {
        self.reg
            .notary(chain, self.reg.epoch_of(height))
            .iter()
            .copied()
            .filter(|n| self.byzantine.contains(n))
            .collect()
    }

    /// Byzantine members whose credential beats every correct member that
    /// would propose, best first.
    fn ranking(&mut self, chain: ChainId, height: u64) -> &[NodeId] {
        let reg = self.reg.clone();
        let byzantine = &self.byzantine;
        self.rankings.entry((chain, height)).or_insert_with(|| {
            let epoch = reg.epoch_of(height);
            let crs = reg.config(epoch).crs;
            let status = reg.status(chain, height);
            let mut ranked: Vec<(Digest, bool, NodeId)> = reg
                .notary(chain, epoch)
                .iter()
                .map(|n| {
                    let keys = KeyPair::derive(reg.seed, *n);
                    let byz = byzantine.contains(n);
                    let proposes = byz || should_propose(&keys, &status, &crs, reg.delta);
                    (crypto::vrf_distance(&crs, &crypto::sign(&keys, &status)), byz, *n, proposes)
                })
                .filter(|x| x.3)
                .map(|(d, b, n, _)| (d, b, n))
                .collect();
            ranked.sort();
            ranked.iter().take_while(|x| x.1).map(|x| x.2).collect()
        })
    }

    /// Two distinct, valid bodies a Byzantine proposer can offer.
    fn bodies(&self, proposer: NodeId, chain: ChainId, height: u64, now: SimTime, node: &CorrectNode) -> Option<(Block, Block)> {
        let (parent, parent_notarization) = node.parent_of(chain, height)?;
        let ctx = HeightContext {
            chain,
            height,
            epoch: self.reg.epoch_of(height),
            parent,
            parent_notarization,
            acked: Vec::new(),
            now,
        };
        let x = build_proposal(&ctx, proposer, Vec::new(), Vec::new()).ok()?;
        let y = build_proposal(&HeightContext { now: x.timestamp + 1, ..ctx }, proposer, Vec::new(), Vec::new()).ok()?;
        Some((x, y))
    }

    fn vote(&self, from: NodeId, kind: MessageKind, chain: ChainId, height: u64, round: u64, value: BaValue) -> Payload {
        let status = self.reg.status(chain, height);
        Payload::Ba(BaMessage::signed(&self.keys[&from], kind, chain, height, round, value, &status))
    }

    /// Called whenever a correct node starts a height; acts once per
    /// height. Returns `(from, to, payload)` sends that travel the network.
    pub fn on_start(&mut self, chain: ChainId, height: u64, now: SimTime, node: &CorrectNode, targets: &[NodeId]) -> Vec<(NodeId, NodeId, Payload)> {
        if self.behavior != Behavior::EquivocateInit || !self.started.insert((chain, height)) {
            return Vec::new();
        }
        let mut out = Vec::new();
        for b in self.members(chain, height) {
            let Some((x, y)) = self.bodies(b, chain, height, now, node) else {
                continue;
            };
            for &to in targets {
                let body = if self.first_half.contains(&to) { &x } else { &y };
                out.push((b, to, Payload::Proposal(body.clone())));
                out.push((b, to, self.vote(b, MessageKind::Init, chain, height, 0, BaValue::Block(body.hash))));
            }
        }
        out
    }

    /// Messages handed straight to `target` just before it runs Step 2 of
    /// `round`.
    pub fn before_precommit(&mut self, target: NodeId, chain: ChainId, height: u64, round: u64, now: SimTime, node: &CorrectNode) -> Vec<(NodeId, Payload)> {
        if !self.hooked.insert((target, chain, height, round)) {
            return Vec::new();
        }
        let first = self.first_half.contains(&target);
        match self.behavior {
            Behavior::LeaderHog | Behavior::DelayRelease => {
                let ranking = self.ranking(chain, height).to_vec();
                let pick = if self.behavior == Behavior::LeaderHog {
                    ranking.get(round as usize - 1)
                } else {
                    ranking.iter().rev().nth(round as usize - 1)
                };
                let Some(&b) = pick else {
                    return Vec::new();
                };
                if self.behavior == Behavior::DelayRelease && !first {
                    return Vec::new();
                }
                let Some((x, y)) = self.bodies(b, chain, height, now, node) else {
                    return Vec::new();
                };
                let body = if first || self.behavior == Behavior::DelayRelease { x } else { y };
                let init = self.vote(b, MessageKind::Init, chain, height, 0, BaValue::Block(body.hash));
                vec![(b, Payload::Proposal(body)), (b, init)]
            }
            Behavior::Chaos => {
                let mut out = Vec::new();
                for b in self.members(chain, height) {
                    let Some((x, y)) = self.bodies(b, chain, height, now, node) else {
                        continue;
                    };
                    let values = [BaValue::Block(x.hash), BaValue::Block(y.hash), BaValue::Bottom];
                    if round == 1 {
                        let body = if self.rng.random_bool(0.5) { &x } else { &y };
                        out.push((b, Payload::Proposal(body.clone())));
                        out.push((b, self.vote(b, MessageKind::Init, chain, height, 0, BaValue::Block(body.hash))));
                    }
                    out.push((b, Payload::Proposal(x.clone())));
                    out.push((b, Payload::Proposal(y.clone())));
                    for r in [round, round + 1] {
                        let pre = *values.choose(&mut self.rng).expect("non-empty");
                        out.push((b, self.vote(b, MessageKind::PreCommit, chain, height, r, pre)));
                        let commit = if self.rng.random_bool(0.25) { BaValue::Skip } else { *values.choose(&mut self.rng).expect("non-empty") };
                        if self.rng.random_bool(0.5) {
                            out.push((b, self.vote(b, MessageKind::Commit, chain, height, r, commit)));
                        }
                    }
                }
                out
            }
            Behavior::Silent | Behavior::EquivocateInit => Vec::new(),
        }
    }
}
