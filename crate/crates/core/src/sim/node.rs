use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::context::{Payload, Registry, SharedRegistry};
use crate::ba::{BaMachine, BaMessage, BaParams, BaValue, CommitTally, MessageKind, Step};
use crate::chain::{
    compaction_share, decide_height, notarization_share, notarize, notarize_compaction, propose_or_abstain,
    HeightContext, LoadBalancer, Mempool, ProposeParams,
};
use crate::crypto::{hash, verify_share, Digest, KeyPair, ShareSignature, ThresholdSignature};
use crate::lattice::{Block, CompactionConfirmation, CompactionEntry, LatticeView};
use crate::ordering::{ConfigOrderer, DeliveryBatch};
use crate::timestamp::Timestamper;
use crate::{ChainId, NodeId, SimTime};

/// Most confirmations packed into one chain-0 block.
const MAX_CONFIRMATIONS: usize = 64;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Timer {
    Start { chain: ChainId, height: u64 },
    Tick { chain: ChainId, height: u64 },
}

#[derive(Debug)]
pub enum Output {
    Broadcast(Payload),
    At(SimTime, Timer),
}

/// What one node learned about one height.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub value: BaValue,
    /// Round of the deciding commit quorum.
    pub round: u64,
    pub time: SimTime,
    /// When this node started the height, if it did.
    pub start: Option<SimTime>,
    /// Whether the node's own agreement machine reached the decision.
    pub by_machine: bool,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct CompactionRow {
    pub height: u64,
    pub block: Digest,
    pub chain: ChainId,
    pub block_timestamp: SimTime,
    pub consensus_timestamp: SimTime,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct NodeCounters {
    pub proposals: u64,
    pub abstentions: u64,
    pub missing_parent: u64,
    pub empty_blocks: u64,
    pub rejected_messages: u64,
    pub equivocations: u64,
}

#[derive(Debug, Default)]
struct HeightState {
    machine: Option<BaMachine>,
    tally: CommitTally,
    ticks: BTreeSet<SimTime>,
    start: Option<SimTime>,
    decided: bool,
}

#[derive(Debug, Default)]
struct ChainState {
    settled: Vec<Block>,
    sigmas: Vec<Option<ThresholdSignature>>,
    in_view: usize,
    decided: BTreeMap<u64, BaValue>,
    bodies: HashMap<Digest, Block>,
    heights: BTreeMap<u64, HeightState>,
    shares: BTreeMap<u64, BTreeMap<Digest, BTreeMap<u32, ShareSignature>>>,
    scheduled: BTreeSet<u64>,
}

/// A correct node: agreement on every chain it notarizes, settlement and
/// notarization of every chain, and the lattice, ordering and timestamp
/// pipeline on top.
pub struct CorrectNode {
    pub id: NodeId,
    keys: KeyPair,
    reg: Arc<Registry>,
    chains: Vec<ChainState>,
    view: LatticeView,
    orderer: ConfigOrderer,
    timestamper: Timestamper,
    config: u32,
    batches: Vec<DeliveryBatch>,
    compaction: Vec<CompactionRow>,
    compaction_pool: BTreeMap<u64, BTreeMap<(Digest, u64), BTreeMap<u32, ShareSignature>>>,
    confirmations: BTreeMap<u64, CompactionConfirmation>,
    confirmed_upto: u64,
    mempool: Mempool,
    decisions: BTreeMap<(ChainId, u64), DecisionRecord>,
    counters: NodeCounters,
    faults: Vec<String>,
}

impl std::fmt::Debug for CorrectNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CorrectNode").field("id", &self.id).finish()
    }
}

impl CorrectNode {
    pub fn new(id: NodeId, reg: Arc<Registry>) -> CorrectNode {
        let chains = (0..reg.max_chains).map(|_| ChainState::default()).collect();
        let orderer = ConfigOrderer::new(reg.initial_chains, reg.phi, reg.change).expect("validated scenario");
        let timestamper = Timestamper::new(vec![0; reg.initial_chains as usize], reg.monotone);
        CorrectNode {
            id,
            keys: KeyPair::derive(reg.seed, id),
            view: LatticeView::with_notaries(Arc::new(SharedRegistry(reg.clone()))),
            reg,
            chains,
            orderer,
            timestamper,
            config: 0,
            batches: Vec::new(),
            compaction: Vec::new(),
            compaction_pool: BTreeMap::new(),
            confirmations: BTreeMap::new(),
            confirmed_upto: 0,
            mempool: Mempool::new(),
            decisions: BTreeMap::new(),
            counters: NodeCounters::default(),
            faults: Vec::new(),
        }
    }

    pub fn batches(&self) -> &[DeliveryBatch] {
        &self.batches
    }

    pub fn compaction(&self) -> &[CompactionRow] {
        &self.compaction
    }

    pub fn decisions(&self) -> &BTreeMap<(ChainId, u64), DecisionRecord> {
        &self.decisions
    }

    pub fn counters(&self) -> NodeCounters {
        self.counters
    }

    /// Local problems that indicate a protocol violation.
    pub fn faults(&self) -> &[String] {
        &self.faults
    }

    pub fn settled(&self, chain: ChainId) -> &[Block] {
        &self.chains[chain as usize].settled
    }

    /// The settled parent of `height` and its notarization, when both are
    /// known.
    pub fn parent_of(&self, chain: ChainId, height: u64) -> Option<(Option<&Block>, Option<ThresholdSignature>)> {
        if height == 0 {
            return Some((None, None));
        }
        let cs = &self.chains[chain as usize];
        let parent = cs.settled.get(height as usize - 1)?;
        let sigma = cs.sigmas[height as usize - 1]?;
        Some((Some(parent), Some(sigma)))
    }

    /// Whether a `Tick` now would run Step 2 of `round`.
    pub fn pending_precommit(&self, chain: ChainId, height: u64, now: SimTime) -> Option<u64> {
        let m = self.chains[chain as usize].heights.get(&height)?.machine.as_ref()?;
        (m.step() == Step::PreCommit && m.next_deadline().is_some_and(|d| d <= now)).then(|| m.round())
    }

    /// `(chain, height, round)` for every height whose machine is still
    /// running.
    pub fn open_heights(&self) -> Vec<(ChainId, u64, u64)> {
        let mut open = Vec::new();
        for (c, cs) in self.chains.iter().enumerate() {
            for (h, hs) in &cs.heights {
                if let Some(m) = hs.machine.as_ref().filter(|m| !hs.decided && m.step() != Step::NotStarted) {
                    open.push((c as ChainId, *h, m.round()));
                }
            }
        }
        open
    }

    /// Settled heights on `chain`.
    pub fn height(&self, chain: ChainId) -> u64 {
        self.chains[chain as usize].settled.len() as u64
    }

    pub fn inject(&mut self, now: SimTime, tx: Digest) {
        self.mempool.inject(now, tx);
    }

    /// Schedules height 0 of every chain.
    pub fn boot(&mut self, offset: SimTime, out: &mut Vec<Output>) {
        for c in 0..self.reg.max_chains {
            self.chains[c as usize].scheduled.insert(0);
            out.push(Output::At(self.reg.chain_start(c) + offset, Timer::Start { chain: c, height: 0 }));
        }
    }

    pub fn on_timer(&mut self, now: SimTime, timer: Timer, out: &mut Vec<Output>) {
        match timer {
            Timer::Start { chain, height } => self.start_height(now, chain, height, out),
            Timer::Tick { chain, height } => self.tick(now, chain, height, out),
        }
    }

    fn start_height(&mut self, now: SimTime, chain: ChainId, height: u64, out: &mut Vec<Output>) {
        let epoch = self.reg.epoch_of(height);
        let member = self.reg.member_index(chain, epoch, self.id).is_some();
        let already = {
            let cs = &self.chains[chain as usize];
            (height as usize) < cs.settled.len() || cs.decided.contains_key(&height)
        };
        if already {
            return;
        }
        self.height_state(chain, height).start = Some(now);
        if !member {
            return;
        }
        let proposal = self.make_proposal(now, chain, height);
        let cs = &mut self.chains[chain as usize];
        if let Some(b) = &proposal {
            cs.bodies.insert(b.hash, b.clone());
            out.push(Output::Broadcast(Payload::Proposal(b.clone())));
        }
        let machine = self.machine(chain, height);
        if machine.step() != Step::NotStarted {
            return;
        }
        let msgs = machine.start(now, proposal.map(|b| b.hash));
        self.emit(now, chain, height, msgs, out);
    }

    fn make_proposal(&mut self, now: SimTime, chain: ChainId, height: u64) -> Option<Block> {
        let reg = self.reg.clone();
        let epoch = reg.epoch_of(height);
        let cs = &self.chains[chain as usize];
        if cs.settled.len() as u64 != height {
            self.counters.missing_parent += 1;
            return None;
        }
        let parent = height.checked_sub(1).map(|h| &cs.settled[h as usize]);
        let parent_notarization = height.checked_sub(1).and_then(|h| cs.sigmas[h as usize]);
        let (acked, now) = self.choose_acks(chain, now, parent);
        let ctx = HeightContext { chain, height, epoch, parent, parent_notarization, acked, now };
        let confirmations = if chain == 0 {
            (self.confirmed_upto..)
                .map_while(|k| self.confirmations.get(&k).copied())
                .take(MAX_CONFIRMATIONS)
                .collect()
        } else {
            Vec::new()
        };
        let status = reg.status(chain, height);
        let params = ProposeParams {
            status: &status,
            crs: &reg.config(epoch).crs,
            delta: reg.delta,
            balancer: LoadBalancer::with_change(reg.initial_chains, reg.change),
            max_transactions: reg.max_transactions,
        };
        match propose_or_abstain(&ctx, &self.keys, params, &self.mempool, confirmations) {
            Ok(Some(b)) => {
                self.counters.proposals += 1;
                Some(b)
            }
            Ok(None) => {
                self.counters.abstentions += 1;
                None
            }
            Err(_) => {
                self.counters.missing_parent += 1;
                None
            }
        }
    }

    /// Latest notarized block of every other chain. A block that ends up
    /// after the configuration change acks removed chains only up to their
    /// last block before the change.
    fn choose_acks(&self, chain: ChainId, now: SimTime, parent: Option<&Block>) -> (Vec<&Block>, SimTime) {
        let tips: Vec<&Block> = self.view.chain_ids().filter(|c| *c != chain).filter_map(|c| self.view.tip(c)).collect();
        let Some(change) = self.reg.change else {
            return (tips, now);
        };
        let floor = parent.map_or(0, |p| p.timestamp + 1);
        let latest = tips.iter().map(|b| b.timestamp).max().unwrap_or(0);
        if now.max(floor).max(latest) < change.time {
            return (tips, now);
        }
        let acked = tips
            .into_iter()
            .filter_map(|b| {
                if b.chain < change.chains || b.timestamp < change.time {
                    return Some(b);
                }
                self.view
                    .chain(b.chain)
                    .iter()
                    .rev()
                    .map(|h| self.view.get(h).expect("released"))
                    .find(|x| x.timestamp < change.time)
            })
            .collect();
        (acked, now.max(change.time))
    }

    fn height_state(&mut self, chain: ChainId, height: u64) -> &mut HeightState {
        self.chains[chain as usize].heights.entry(height).or_default()
    }

    fn machine(&mut self, chain: ChainId, height: u64) -> &mut BaMachine {
        let reg = self.reg.clone();
        let keys = self.keys.clone();
        let hs = self.chains[chain as usize].heights.entry(height).or_default();
        hs.machine.get_or_insert_with(|| {
            let epoch = reg.epoch_of(height);
            let params = BaParams {
                chain,
                height,
                notary: reg.notary(chain, epoch).to_vec(),
                crs: reg.config(epoch).crs,
                status: reg.status(chain, height),
                lambda: reg.lambda,
            };
            BaMachine::new(params, keys, reg.directory)
        })
    }

    fn tick(&mut self, now: SimTime, chain: ChainId, height: u64, out: &mut Vec<Output>) {
        let Some(hs) = self.chains[chain as usize].heights.get_mut(&height) else {
            return;
        };
        hs.ticks.remove(&now);
        let Some(m) = hs.machine.as_mut() else {
            return;
        };
        let msgs = m.on_tick(now);
        self.emit(now, chain, height, msgs, out);
    }

    /// Broadcasts the machine's own messages, then follows up on its state.
    fn emit(&mut self, now: SimTime, chain: ChainId, height: u64, msgs: Vec<BaMessage>, out: &mut Vec<Output>) {
        let hs = self.height_state(chain, height);
        for m in msgs {
            hs.tally.record(&m);
            out.push(Output::Broadcast(Payload::Ba(m)));
        }
        self.after_ba(now, chain, height, out);
    }

    fn after_ba(&mut self, now: SimTime, chain: ChainId, height: u64, out: &mut Vec<Output>) {
        let quorum = self.reg.quorum();
        let Some(hs) = self.chains[chain as usize].heights.get_mut(&height) else {
            return;
        };
        if let Some(d) = hs.machine.as_ref().and_then(BaMachine::next_deadline) {
            let at = d.max(now);
            if hs.ticks.insert(at) {
                out.push(Output::At(at, Timer::Tick { chain, height }));
            }
        }
        if hs.decided {
            return;
        }
        if let Some((round, value)) = hs.tally.decision(quorum) {
            hs.decided = true;
            let by_machine = hs.machine.as_ref().and_then(BaMachine::decided).is_some();
            if let Some(d) = hs.machine.as_ref().and_then(BaMachine::decided) {
                if (d.value, d.round) != (value, round) {
                    self.faults.push(format!("machine and tally differ at {chain}/{height}"));
                }
            }
            let start = hs.start;
            self.decisions.insert((chain, height), DecisionRecord { value, round, time: now, start, by_machine });
            let cs = &mut self.chains[chain as usize];
            cs.decided.insert(height, value);
            if cs.scheduled.insert(height + 1) {
                out.push(Output::At(now + 2 * self.reg.lambda, Timer::Start { chain, height: height + 1 }));
            }
            self.try_settle(chain, out);
        }
    }

    pub fn on_message(&mut self, now: SimTime, payload: &Payload, out: &mut Vec<Output>) {
        match payload {
            Payload::Ba(m) => self.on_ba(now, m, out),
            Payload::Proposal(b) => self.on_proposal(b, out),
            Payload::Share { chain, height, block, share } => self.on_share(*chain, *height, *block, *share, out),
            Payload::Compaction { entry, epoch, share } => self.on_compaction_share(*entry, *epoch, *share),
        }
    }

    fn on_ba(&mut self, now: SimTime, m: &BaMessage, out: &mut Vec<Output>) {
        if m.chain >= self.reg.max_chains {
            self.counters.rejected_messages += 1;
            return;
        }
        let cs = &self.chains[m.chain as usize];
        if (m.height as usize) < cs.settled.len() && !cs.heights.contains_key(&m.height) {
            return;
        }
        let epoch = self.reg.epoch_of(m.height);
        let member = self.reg.member_index(m.chain, epoch, self.id).is_some();
        let accepted = if member {
            let machine = self.machine(m.chain, m.height);
            if machine.step() == Step::Done {
                Ok(())
            } else {
                match machine.on_message(now, m) {
                    Ok(crate::ba::Recorded::Equivocation) => {
                        self.counters.equivocations += 1;
                        Ok(())
                    }
                    Ok(_) => Ok(()),
                    Err(e) => Err(e),
                }
            }
        } else {
            self.check_foreign(m)
        };
        if accepted.is_err() {
            self.counters.rejected_messages += 1;
            return;
        }
        if m.kind == MessageKind::Commit {
            self.height_state(m.chain, m.height).tally.record(m);
        }
        self.after_ba(now, m.chain, m.height, out);
    }

    /// Checks a vote this node only watches.
    fn check_foreign(&self, m: &BaMessage) -> Result<(), crate::ba::BaError> {
        let epoch = self.reg.epoch_of(m.height);
        if !self.reg.notary(m.chain, epoch).contains(&m.sender) {
            return Err(crate::ba::BaError::NotMember(m.sender));
        }
        if m.kind == MessageKind::Commit && m.round == 0 {
            return Err(crate::ba::BaError::Malformed("round"));
        }
        let status = self.reg.status(m.chain, m.height);
        if !m.verify(&self.reg.directory.public(m.sender), &status) {
            return Err(crate::ba::BaError::InvalidSignature(m.sender));
        }
        Ok(())
    }

    fn on_proposal(&mut self, b: &Block, out: &mut Vec<Output>) {
        if b.chain >= self.reg.max_chains || !b.hash_is_valid() {
            self.counters.rejected_messages += 1;
            return;
        }
        let cs = &mut self.chains[b.chain as usize];
        if (b.height as usize) < cs.settled.len() {
            return;
        }
        cs.bodies.entry(b.hash).or_insert_with(|| b.clone());
        self.try_settle(b.chain, out);
    }

    fn on_share(&mut self, chain: ChainId, height: u64, block: Digest, share: ShareSignature, out: &mut Vec<Output>) {
        if chain >= self.reg.max_chains {
            return;
        }
        let group = self.reg.group(self.reg.epoch_of(height), chain);
        let valid = group
            .public
            .verification_key(share.share_index)
            .is_some_and(|vk| verify_share(vk, &block.0, &share));
        if !valid {
            self.counters.rejected_messages += 1;
            return;
        }
        let cs = &mut self.chains[chain as usize];
        if cs.sigmas.get(height as usize).is_some_and(Option::is_some) {
            return;
        }
        cs.shares
            .entry(height)
            .or_default()
            .entry(block)
            .or_default()
            .insert(share.share_index, share);
        self.try_sigma(chain, height, out);
    }

    /// Settles decided heights in order as bodies and notarizations allow.
    fn try_settle(&mut self, chain: ChainId, out: &mut Vec<Output>) {
        loop {
            let reg = self.reg.clone();
            let cs = &mut self.chains[chain as usize];
            let h = cs.settled.len() as u64;
            let Some(value) = cs.decided.get(&h).copied() else {
                return;
            };
            let parent = h.checked_sub(1).map(|p| &cs.settled[p as usize]);
            let parent_notarization = h.checked_sub(1).and_then(|p| cs.sigmas[p as usize]);
            if value == BaValue::Bottom && parent.is_some() && parent_notarization.is_none() {
                return;
            }
            let ctx = HeightContext {
                chain,
                height: h,
                epoch: reg.epoch_of(h),
                parent,
                parent_notarization,
                acked: Vec::new(),
                now: 0,
            };
            let bodies = &cs.bodies;
            let block = match decide_height(&ctx, value, reg.chain_start(chain), |d| bodies.get(d).cloned()) {
                Ok(b) => b,
                Err(crate::chain::ChainError::UnknownDecidedBlock(_)) => return,
                Err(e) => {
                    self.faults.push(format!("cannot settle {chain}/{h}: {e}"));
                    return;
                }
            };
            cs.decided.remove(&h);
            cs.bodies.retain(|_, b| b.height > h);
            cs.settled.push(block.clone());
            cs.sigmas.push(None);
            cs.heights.retain(|k, hs| *k > h || !hs.decided);
            if block.is_empty_block() {
                self.counters.empty_blocks += 1;
            }
            self.mempool.commit(&block.payload.transactions);
            if chain == 0 {
                if let Some(last) = block.payload.confirmations.last() {
                    self.confirmed_upto = self.confirmed_upto.max(last.entry.height + 1);
                }
            }
            let epoch = reg.epoch_of(h);
            if let Some(idx) = reg.member_index(chain, epoch, self.id) {
                let share = notarization_share(reg.group(epoch, chain), idx, &block);
                out.push(Output::Broadcast(Payload::Share { chain, height: h, block: block.hash, share }));
                self.chains[chain as usize]
                    .shares
                    .entry(h)
                    .or_default()
                    .entry(block.hash)
                    .or_default()
                    .insert(share.share_index, share);
            }
            self.try_sigma(chain, h, out);
        }
    }

    fn try_sigma(&mut self, chain: ChainId, height: u64, out: &mut Vec<Output>) {
        let reg = self.reg.clone();
        let cs = &mut self.chains[chain as usize];
        let Some(block) = cs.settled.get(height as usize) else {
            return;
        };
        if cs.sigmas[height as usize].is_some() {
            return;
        }
        let group = &reg.group(reg.epoch_of(height), chain).public;
        let Some(shares) = cs.shares.get(&height).and_then(|m| m.get(&block.hash)) else {
            return;
        };
        if shares.len() < group.threshold {
            return;
        }
        let shares: Vec<ShareSignature> = shares.values().copied().collect();
        match notarize(group, block, &shares) {
            Ok(sig) => {
                cs.sigmas[height as usize] = Some(sig);
                cs.shares.remove(&height);
            }
            Err(e) => {
                self.faults.push(format!("notarization of {chain}/{height} failed: {e}"));
                return;
            }
        }
        self.try_view(chain, out);
        self.try_settle(chain, out);
    }

    /// Moves settled, notarized blocks into the lattice view.
    fn try_view(&mut self, chain: ChainId, out: &mut Vec<Output>) {
        loop {
            let cs = &mut self.chains[chain as usize];
            if cs.in_view >= cs.settled.len() || cs.sigmas[cs.in_view].is_none() {
                return;
            }
            let block = cs.settled[cs.in_view].clone();
            cs.in_view += 1;
            match self.view.insert_block(block) {
                Ok(released) => {
                    for h in released {
                        self.order(h, out);
                    }
                }
                Err(e) => self.faults.push(format!("lattice rejected a settled block of chain {chain}: {e}")),
            }
        }
    }

    fn order(&mut self, hash: Digest, out: &mut Vec<Output>) {
        let block = self.view.get(&hash).expect("released").clone();
        let batches = match self.orderer.receive_block(&block) {
            Ok(b) => b,
            Err(e) => {
                self.faults.push(format!("ordering failed: {e}"));
                return;
            }
        };
        for batch in batches {
            if batch.config != self.config {
                let chains = self.reg.change.map_or(self.reg.initial_chains, |c| c.chains);
                self.timestamper.reconfigure(chains as usize, 0);
                self.config = batch.config;
            }
            for h in &batch.blocks {
                let b = self.view.get(h).expect("delivered blocks are released");
                let ts = match self.timestamper.stamp(b) {
                    Ok(t) => t,
                    Err(e) => {
                        self.faults.push(format!("timestamping failed: {e}"));
                        continue;
                    }
                };
                let row = CompactionRow {
                    height: self.compaction.len() as u64,
                    block: *h,
                    chain: b.chain,
                    block_timestamp: b.timestamp,
                    consensus_timestamp: ts,
                };
                let entry = CompactionEntry { height: row.height, consensus_timestamp: ts, block: *h };
                let epoch = b.epoch;
                self.compaction.push(row);
                if let Some(idx) = self.reg.member_index(0, epoch, self.id) {
                    let share = compaction_share(self.reg.group(epoch, 0), idx, &entry);
                    out.push(Output::Broadcast(Payload::Compaction { entry, epoch, share }));
                    self.on_compaction_share(entry, epoch, share);
                }
                self.try_confirm(entry.height);
            }
            self.batches.push(batch);
        }
    }

    fn on_compaction_share(&mut self, entry: CompactionEntry, epoch: u64, share: ShareSignature) {
        if entry.height < self.confirmed_upto || self.confirmations.contains_key(&entry.height) {
            return;
        }
        let group = &self.reg.group(epoch, 0).public;
        let valid = group
            .verification_key(share.share_index)
            .is_some_and(|vk| verify_share(vk, &entry.encode(), &share));
        if !valid {
            self.counters.rejected_messages += 1;
            return;
        }
        self.compaction_pool
            .entry(entry.height)
            .or_default()
            .entry((hash(&entry.encode()), epoch))
            .or_default()
            .insert(share.share_index, share);
        self.try_confirm(entry.height);
    }

    /// Combines shares for compaction height `k` once this node has
    /// computed the same entry itself.
    fn try_confirm(&mut self, k: u64) {
        let Some(row) = self.compaction.get(k as usize) else {
            return;
        };
        if self.confirmations.contains_key(&k) {
            return;
        }
        let entry = CompactionEntry { height: k, consensus_timestamp: row.consensus_timestamp, block: row.block };
        let epoch = self.view.get(&row.block).map_or(0, |b| b.epoch);
        let group = &self.reg.group(epoch, 0).public;
        let Some(shares) = self.compaction_pool.get(&k).and_then(|m| m.get(&(hash(&entry.encode()), epoch))) else {
            return;
        };
        if shares.len() < group.threshold {
            return;
        }
        let shares: Vec<ShareSignature> = shares.values().copied().collect();
        if let Ok(signature) = notarize_compaction(group, &entry, &shares) {
            self.confirmations.insert(k, CompactionConfirmation { entry, epoch, signature });
            self.compaction_pool.remove(&k);
        }
    }
}
