use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{BaMessage, BaValue, MessageKind};
use crate::crypto::Signature;
use crate::NodeId;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Recorded {
    New,
    Duplicate,
    /// A second, different message for the same slot. The first is kept.
    Equivocation,
}

/// Votes of one kind in one round: first value per sender, plus counts.
#[derive(Clone, Debug, Default)]
struct RoundVotes {
    by_sender: BTreeMap<NodeId, BaValue>,
    counts: HashMap<BaValue, usize>,
}

impl RoundVotes {
    fn record(&mut self, sender: NodeId, value: BaValue) -> Recorded {
        match self.by_sender.get(&sender) {
            Some(v) if *v == value => Recorded::Duplicate,
            Some(_) => Recorded::Equivocation,
            None => {
                self.by_sender.insert(sender, value);
                *self.counts.entry(value).or_default() += 1;
                Recorded::New
            }
        }
    }

    fn senders(&self) -> usize {
        self.by_sender.len()
    }

    /// A value other than `Skip` backed by at least `quorum` senders.
    fn quorum_value(&self, quorum: usize) -> Option<BaValue> {
        self.counts
            .iter()
            .filter(|(v, c)| **v != BaValue::Skip && **c >= quorum)
            .map(|(v, _)| *v)
            .min()
    }
}

/// Everything one node has heard for one height.
#[derive(Clone, Debug, Default)]
pub struct MessageLedger {
    inits: BTreeMap<NodeId, (BaValue, Signature)>,
    precommits: BTreeMap<u64, RoundVotes>,
    commits: BTreeMap<u64, RoundVotes>,
    flagged: BTreeSet<NodeId>,
}

impl MessageLedger {
    pub fn new() -> MessageLedger {
        MessageLedger::default()
    }

    /// Records an already verified message.
    pub fn record(&mut self, msg: &BaMessage) -> Recorded {
        let r = match msg.kind {
            MessageKind::Init => match self.inits.get(&msg.sender) {
                Some((v, _)) if *v == msg.value => Recorded::Duplicate,
                Some(_) => Recorded::Equivocation,
                None => {
                    self.inits.insert(msg.sender, (msg.value, msg.signature));
                    Recorded::New
                }
            },
            MessageKind::PreCommit => self.precommits.entry(msg.round).or_default().record(msg.sender, msg.value),
            MessageKind::Commit => self.commits.entry(msg.round).or_default().record(msg.sender, msg.value),
        };
        if r == Recorded::Equivocation {
            self.flagged.insert(msg.sender);
        }
        r
    }

    pub fn flagged(&self) -> &BTreeSet<NodeId> {
        &self.flagged
    }

    /// Init senders not caught equivocating.
    pub fn valid_inits(&self) -> impl Iterator<Item = (NodeId, &Signature)> + '_ {
        self.inits
            .iter()
            .filter(|(n, _)| !self.flagged.contains(n))
            .map(|(n, (_, sig))| (*n, sig))
    }

    pub fn init_value(&self, sender: NodeId) -> Option<BaValue> {
        self.inits.get(&sender).map(|(v, _)| *v)
    }

    pub fn precommit_quorum(&self, round: u64, quorum: usize) -> Option<BaValue> {
        self.precommits.get(&round).and_then(|v| v.quorum_value(quorum))
    }

    /// Rounds with a pre-commit quorum, with the value, highest first.
    pub fn precommit_quorums(&self, quorum: usize) -> impl Iterator<Item = (u64, BaValue)> + '_ {
        self.precommits
            .iter()
            .rev()
            .filter_map(move |(r, v)| v.quorum_value(quorum).map(|x| (*r, x)))
    }

    /// Highest round in which at least `quorum` senders committed anything.
    pub fn highest_commit_round(&self, quorum: usize) -> Option<u64> {
        self.commits
            .iter()
            .rev()
            .find(|(_, v)| v.senders() >= quorum)
            .map(|(r, _)| *r)
    }

    /// Lowest round with `quorum` commits on one value, and that value.
    pub fn decision(&self, quorum: usize) -> Option<(u64, BaValue)> {
        self.commits
            .iter()
            .find_map(|(r, v)| v.quorum_value(quorum).map(|x| (*r, x)))
    }

    pub fn commit_count(&self, round: u64, value: BaValue) -> usize {
        self.commits
            .get(&round)
            .and_then(|v| v.counts.get(&value))
            .copied()
            .unwrap_or(0)
    }

    pub fn precommit_count(&self, round: u64, value: BaValue) -> usize {
        self.precommits
            .get(&round)
            .and_then(|v| v.counts.get(&value))
            .copied()
            .unwrap_or(0)
    }
}

/// Commit-only view used by nodes that only watch a height.
#[derive(Clone, Debug, Default)]
pub struct CommitTally {
    commits: BTreeMap<u64, RoundVotes>,
}

impl CommitTally {
    pub fn record(&mut self, msg: &BaMessage) -> Recorded {
        if msg.kind != MessageKind::Commit {
            return Recorded::Duplicate;
        }
        self.commits.entry(msg.round).or_default().record(msg.sender, msg.value)
    }

    pub fn decision(&self, quorum: usize) -> Option<(u64, BaValue)> {
        self.commits
            .iter()
            .find_map(|(r, v)| v.quorum_value(quorum).map(|x| (*r, x)))
    }
}
