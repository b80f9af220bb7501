use std::collections::BTreeSet;

use super::{elect_leader, BaError, BaMessage, BaValue, KeyDirectory, MessageKind, MessageLedger, Recorded};
use crate::crypto::{Digest, KeyPair};
use crate::{max_faulty, ChainId, NodeId, SimTime};

/// Fixed inputs of one agreement instance.
#[derive(Clone, Debug)]
pub struct BaParams {
    pub chain: ChainId,
    pub height: u64,
    pub notary: Vec<NodeId>,
    pub crs: Digest,
    pub status: Vec<u8>,
    pub lambda: SimTime,
}

/// The step the machine runs next.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Step {
    NotStarted,
    /// Waiting for the 2λ mark to pre-commit.
    PreCommit,
    /// Waiting for the 4λ mark to commit.
    Commit,
    /// Commit sent; only a forward condition moves on.
    Wait,
    Done,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Decision {
    pub value: BaValue,
    /// Round of the deciding commit quorum.
    pub round: u64,
    pub time: SimTime,
}

#[derive(Clone, Debug)]
pub struct BaMachine {
    params: BaParams,
    members: BTreeSet<NodeId>,
    quorum: usize,
    keys: KeyPair,
    directory: KeyDirectory,
    ledger: MessageLedger,
    round: u64,
    lock_value: BaValue,
    lock_round: u64,
    step: Step,
    /// Local-clock marks of the current round in simulated time.
    precommit_at: SimTime,
    commit_at: SimTime,
    decided: Option<Decision>,
    /// `(round, time)` each time a round was entered.
    round_log: Vec<(u64, SimTime)>,
}

impl BaMachine {
    pub fn new(params: BaParams, keys: KeyPair, directory: KeyDirectory) -> BaMachine {
        let members: BTreeSet<NodeId> = params.notary.iter().copied().collect();
        let quorum = 2 * max_faulty(members.len()) + 1;
        BaMachine {
            params,
            members,
            quorum,
            keys,
            directory,
            ledger: MessageLedger::new(),
            round: 1,
            lock_value: BaValue::Bottom,
            lock_round: 0,
            step: Step::NotStarted,
            precommit_at: 0,
            commit_at: 0,
            decided: None,
            round_log: Vec::new(),
        }
    }

    pub fn params(&self) -> &BaParams {
        &self.params
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn lock(&self) -> (BaValue, u64) {
        (self.lock_value, self.lock_round)
    }

    pub fn step(&self) -> Step {
        self.step
    }

    pub fn decided(&self) -> Option<Decision> {
        self.decided
    }

    pub fn ledger(&self) -> &MessageLedger {
        &self.ledger
    }

    pub fn quorum(&self) -> usize {
        self.quorum
    }

    pub fn round_log(&self) -> &[(u64, SimTime)] {
        &self.round_log
    }

    /// Step 1: starts round 1 at `now`, gossiping `proposal` if there is one.
    pub fn start(&mut self, now: SimTime, proposal: Option<Digest>) -> Vec<BaMessage> {
        assert_eq!(self.step, Step::NotStarted, "started twice");
        self.precommit_at = now + 2 * self.params.lambda;
        self.commit_at = now + 4 * self.params.lambda;
        self.step = Step::PreCommit;
        self.round_log.push((1, now));
        let mut out = Vec::new();
        if let Some(v) = proposal {
            let m = self.make(MessageKind::Init, 0, BaValue::Block(v));
            out.push(m);
            self.ledger.record(&m);
        }
        self.evaluate(now);
        out
    }

    /// When the next step is due, if any.
    pub fn next_deadline(&self) -> Option<SimTime> {
        match self.step {
            Step::PreCommit => Some(self.precommit_at),
            Step::Commit => Some(self.commit_at),
            _ => None,
        }
    }

    /// Runs the due step, at most one per call.
    pub fn on_tick(&mut self, now: SimTime) -> Vec<BaMessage> {
        let mut out = Vec::new();
        match self.step {
            Step::PreCommit if now >= self.precommit_at => {
                let value = if self.lock_round == 0 {
                    elect_leader(self.ledger.valid_inits(), &self.params.crs)
                        .ok()
                        .and_then(|leader| self.ledger.init_value(leader))
                        .unwrap_or(BaValue::Bottom)
                } else {
                    self.lock_value
                };
                self.step = Step::Commit;
                let m = self.make(MessageKind::PreCommit, self.round, value);
                out.push(m);
                self.absorb(now, &m);
            }
            Step::Commit if now >= self.commit_at => {
                let value = match self.ledger.precommit_quorum(self.round, self.quorum) {
                    Some(v) => {
                        self.lock_value = v;
                        self.lock_round = self.round;
                        v
                    }
                    None => BaValue::Skip,
                };
                self.step = Step::Wait;
                let m = self.make(MessageKind::Commit, self.round, value);
                out.push(m);
                self.absorb(now, &m);
            }
            _ => {}
        }
        out
    }

    /// Checks and records a message from the network.
    pub fn on_message(&mut self, now: SimTime, msg: &BaMessage) -> Result<Recorded, BaError> {
        if msg.chain != self.params.chain || msg.height != self.params.height {
            return Err(BaError::WrongInstance);
        }
        if !self.members.contains(&msg.sender) {
            return Err(BaError::NotMember(msg.sender));
        }
        match (msg.kind, msg.round, msg.value) {
            (MessageKind::Init, 0, BaValue::Block(_) | BaValue::Bottom) => {}
            (MessageKind::Init, _, _) => return Err(BaError::Malformed("init")),
            (_, 0, _) => return Err(BaError::Malformed("round")),
            (MessageKind::PreCommit, _, BaValue::Skip) => return Err(BaError::Malformed("skip pre-commit")),
            _ => {}
        }
        if !msg.verify(&self.directory.public(msg.sender), &self.params.status) {
            return Err(BaError::InvalidSignature(msg.sender));
        }
        Ok(self.absorb(now, msg))
    }

    fn make(&self, kind: MessageKind, round: u64, value: BaValue) -> BaMessage {
        BaMessage::signed(&self.keys, kind, self.params.chain, self.params.height, round, value, &self.params.status)
    }

    fn absorb(&mut self, now: SimTime, msg: &BaMessage) -> Recorded {
        let r = self.ledger.record(msg);
        if r == Recorded::New {
            self.evaluate(now);
        }
        r
    }

    /// Decide rule and forward conditions.
    fn evaluate(&mut self, now: SimTime) {
        if matches!(self.step, Step::NotStarted | Step::Done) {
            return;
        }
        if let Some((round, value)) = self.ledger.decision(self.quorum) {
            self.decided = Some(Decision { value, round, time: now });
            self.step = Step::Done;
            return;
        }
        let mut jumped = false;
        loop {
            let mut changed = false;
            if let Some((r, v)) = self.ledger.precommit_quorums(self.quorum).next() {
                if r > self.round {
                    self.lock_value = v;
                    self.lock_round = r;
                    self.round = r;
                    jumped = true;
                    changed = true;
                } else if r > self.lock_round {
                    self.lock_value = v;
                    self.lock_round = r;
                }
            }
            if let Some(r) = self.ledger.highest_commit_round(self.quorum) {
                if r >= self.round {
                    self.round = r + 1;
                    jumped = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if jumped {
            self.precommit_at = now;
            self.commit_at = now + 2 * self.params.lambda;
            self.step = Step::PreCommit;
            self.round_log.push((self.round, now));
        }
    }
}
