use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::adversary::Adversary;
use super::context::{Envelope, Payload, Registry};
use super::network::{Class, EventQueue, Network};
use super::node::{CorrectNode, Output, Timer};
use super::report::{build_report, RunReport, RunStats};
use super::scenario::{ms, Scenario};
use super::SimError;
use crate::chain::transaction_digest;
use crate::crypto::Digest;
use crate::{ChainId, NodeId, SimTime};

/// Heights of a chain kept in the duplicate filter behind a node's tip.
const SEEN_WINDOW: u64 = 16;
/// Compaction heights kept in the duplicate filter.
const SEEN_COMPACTION_WINDOW: u64 = 512;

#[derive(Debug)]
enum Event {
    Deliver { to: NodeId, env: Envelope },
    Timer { node: NodeId, timer: Timer },
    Inject { tx: Digest },
    Corrupt { node: NodeId },
    Heal,
}

/// One processed event, enough to drive the nodes again without a network.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub enum TranscriptEvent {
    Boot { node: NodeId, offset: SimTime },
    Deliver { t: SimTime, to: NodeId, payload: Payload },
    Timer { t: SimTime, node: NodeId, timer: Timer },
    Inject { t: SimTime, tx: Digest },
    Corrupt { t: SimTime, node: NodeId },
    Heal { t: SimTime },
}

/// Duplicate filter, bucketed by what a message is about so old buckets
/// can be dropped.
#[derive(Debug, Default)]
struct Seen {
    buckets: BTreeMap<(u8, ChainId, u64), HashSet<Digest>>,
}

fn bucket(payload: &Payload) -> (u8, ChainId, u64) {
    match payload {
        Payload::Ba(m) => (0, m.chain, m.height),
        Payload::Proposal(b) => (0, b.chain, b.height),
        Payload::Share { chain, height, .. } => (0, *chain, *height),
        Payload::Compaction { entry, .. } => (1, 0, entry.height),
    }
}

/// Below this, a node has long finished with a message's subject.
fn floor(node: &CorrectNode, key: (u8, ChainId, u64)) -> u64 {
    match key.0 {
        0 => node.height(key.1).saturating_sub(SEEN_WINDOW),
        _ => (node.compaction().len() as u64).saturating_sub(SEEN_COMPACTION_WINDOW),
    }
}

impl Seen {
    /// False for duplicates and for messages about long-finished subjects.
    fn admit(&mut self, node: &CorrectNode, payload: &Payload, digest: Digest) -> bool {
        let key = bucket(payload);
        if key.2 < floor(node, key) {
            return false;
        }
        let fresh = self.buckets.entry(key).or_default().insert(digest);
        if fresh && self.buckets.len() > 64 {
            let stale: Vec<_> = self.buckets.keys().filter(|k| k.2 < floor(node, **k)).copied().collect();
            for k in stale {
                self.buckets.remove(&k);
            }
        }
        fresh
    }

    fn mark(&mut self, payload: &Payload, digest: Digest) {
        self.buckets.entry(bucket(payload)).or_default().insert(digest);
    }
}

/// The rounds each undecided height had reached when a partition healed.
pub type HealRounds = BTreeMap<(ChainId, u64), u64>;

/// Records the highest round of every height still undecided somewhere.
pub(crate) fn snapshot_heal(nodes: &[Option<CorrectNode>], heal: &mut HealRounds) {
    let mut rounds: BTreeMap<(ChainId, u64), u64> = BTreeMap::new();
    for n in nodes.iter().flatten() {
        for (c, h, r) in n.open_heights() {
            let e = rounds.entry((c, h)).or_insert(r);
            *e = (*e).max(r);
        }
    }
    heal.extend(rounds);
}

/// A seeded, single-threaded run of one scenario.
pub struct Simulation {
    sc: Scenario,
    reg: Arc<Registry>,
    net: Network,
    rng: ChaCha8Rng,
    arrivals: ChaCha8Rng,
    queue: EventQueue<Event>,
    nodes: Vec<Option<CorrectNode>>,
    seen: Vec<Seen>,
    adversary: Adversary,
    heal: HealRounds,
    transcript: Option<Vec<TranscriptEvent>>,
    digest: Sha256,
    stats: RunStats,
    out: Vec<Output>,
}

impl Simulation {
    pub fn new(sc: Scenario) -> Result<Simulation, SimError> {
        sc.validate()?;
        let reg = Arc::new(Registry::new(&sc)?);
        let net = Network::new(&sc);
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
        let nodes: Vec<Option<CorrectNode>> = (0..sc.nodes as u64)
            .map(|i| Some(CorrectNode::new(NodeId(i), reg.clone())))
            .collect();
        let adversary = Adversary::new(&sc, reg.clone());
        let mut sim = Simulation {
            seen: (0..sc.nodes).map(|_| Seen::default()).collect(),
            transcript: sc.transcript.then(Vec::new),
            reg,
            net,
            queue: EventQueue::default(),
            nodes,
            adversary,
            heal: HealRounds::new(),
            digest: Sha256::new(),
            stats: RunStats::default(),
            out: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(0),
            arrivals: ChaCha8Rng::seed_from_u64(sc.arrival_seed.unwrap_or(sc.seed) ^ 0x5eed_a771),
            sc,
        };
        let skew = ms(sim.sc.skew_ms);
        for i in 0..sim.sc.nodes {
            let offset = if skew > 0 { rng.random_range(0..=skew) } else { 0 };
            let node = sim.nodes[i].as_mut().expect("fresh");
            node.boot(offset, &mut sim.out);
            sim.log(TranscriptEvent::Boot { node: NodeId(i as u64), offset });
            sim.flush_outputs(NodeId(i as u64), 0);
        }
        let corrupt_at = sim.sc.adversary.corrupt_at_ms.map_or(0, ms);
        for b in sim.sc.adversary.byzantine.clone() {
            sim.queue.push(corrupt_at, Class::Control, None, Event::Corrupt { node: NodeId(b) });
        }
        if let Some(t) = sim.sc.transactions.clone() {
            for i in 0..t.count {
                let at = ms(t.start_ms + t.interval_ms * i as f64);
                sim.queue.push(at, Class::Control, None, Event::Inject { tx: transaction_digest(sim.sc.seed, i) });
            }
        }
        for end in sim.net.heal_times() {
            sim.queue.push(end, Class::Control, None, Event::Heal);
        }
        sim.rng = rng;
        Ok(sim)
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.reg
    }

    fn log(&mut self, ev: TranscriptEvent) {
        if let Some(t) = self.transcript.as_mut() {
            t.push(ev);
        }
    }

    fn fingerprint(&mut self, time: SimTime, node: NodeId, tag: u8, digest: &[u8]) {
        self.digest.update(time.to_be_bytes());
        self.digest.update(node.0.to_be_bytes());
        self.digest.update([tag]);
        self.digest.update(digest);
    }

    fn key(&mut self) -> Option<u64> {
        self.net.reorders().then(|| self.arrivals.random())
    }

    fn send(&mut self, from: NodeId, to: NodeId, env: Envelope, now: SimTime) {
        let at = self.net.arrival(from, to, now, &mut self.rng);
        let key = self.key();
        self.queue.push(at, Class::Deliver, key, Event::Deliver { to, env });
        self.stats.sends += 1;
    }

    fn broadcast(&mut self, from: NodeId, env: &Envelope, now: SimTime, skip: NodeId) {
        for i in 0..self.nodes.len() as u64 {
            let to = NodeId(i);
            if to != from && to != skip {
                self.send(from, to, env.clone(), now);
            }
        }
    }

    fn flush_outputs(&mut self, node: NodeId, now: SimTime) {
        for o in std::mem::take(&mut self.out) {
            match o {
                Output::Broadcast(p) => {
                    let env = Envelope::new(node, p);
                    self.seen[node.0 as usize].mark(&env.payload, env.digest);
                    self.stats.messages += 1;
                    self.broadcast(node, &env, now, node);
                }
                Output::At(t, timer) => {
                    let class = match timer {
                        Timer::Tick { .. } => Class::Tick,
                        Timer::Start { .. } => Class::Control,
                    };
                    self.queue.push(t, class, None, Event::Timer { node, timer });
                }
            }
        }
    }

    /// Hands `env` to node `to`, which relays it once if it is new.
    fn deliver(&mut self, to: NodeId, env: Envelope, now: SimTime) {
        let Some(node) = self.nodes[to.0 as usize].as_mut() else {
            return;
        };
        if !self.seen[to.0 as usize].admit(node, &env.payload, env.digest) {
            self.stats.duplicates += 1;
            return;
        }
        self.stats.deliveries += 1;
        node.on_message(now, &env.payload, &mut self.out);
        let digest = env.digest;
        self.fingerprint(now, to, 0, &digest.0);
        if self.transcript.is_some() {
            let payload = (*env.payload).clone();
            self.log(TranscriptEvent::Deliver { t: now, to, payload });
        }
        self.flush_outputs(to, now);
        let origin = env.origin;
        self.broadcast(to, &env, now, origin);
    }

    fn correct_targets(&self) -> Vec<NodeId> {
        (0..self.nodes.len() as u64).map(NodeId).filter(|n| !self.sc.is_byzantine(*n)).collect()
    }

    fn on_timer(&mut self, now: SimTime, id: NodeId, timer: Timer) {
        if self.nodes[id.0 as usize].is_none() {
            return;
        }
        match timer {
            Timer::Tick { chain, height } => {
                let node = self.nodes[id.0 as usize].as_ref().expect("checked");
                if let Some(round) = node.pending_precommit(chain, height, now) {
                    let msgs = self.adversary.before_precommit(id, chain, height, round, now, node);
                    self.stats.adversary_messages += msgs.len() as u64;
                    for (from, p) in msgs {
                        self.deliver(id, Envelope::new(from, p), now);
                    }
                }
            }
            Timer::Start { chain, height } => {
                let targets = self.correct_targets();
                let node = self.nodes[id.0 as usize].as_ref().expect("checked");
                let sends = self.adversary.on_start(chain, height, now, node, &targets);
                self.stats.adversary_messages += sends.len() as u64;
                for (from, to, p) in sends {
                    self.send(from, to, Envelope::new(from, p), now);
                }
            }
        }
        let Some(node) = self.nodes[id.0 as usize].as_mut() else {
            return;
        };
        node.on_timer(now, timer, &mut self.out);
        self.fingerprint(now, id, 1, &[matches!(timer, Timer::Tick { .. }) as u8]);
        self.log(TranscriptEvent::Timer { t: now, node: id, timer });
        self.flush_outputs(id, now);
    }

    fn complete(&self) -> bool {
        let chains = self.reg.required_chains();
        self.nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.sc.is_byzantine(NodeId(*i as u64)))
            .all(|(_, n)| n.as_ref().is_some_and(|n| chains.iter().all(|c| n.height(*c) >= self.sc.heights)))
    }

    /// Runs to completion or to the horizon.
    pub fn run(mut self) -> Result<RunReport, SimError> {
        let started = Instant::now();
        let horizon = self.sc.horizon();
        let mut finished = false;
        let mut now = 0;
        let mut since_check = 0u32;
        while let Some(ev) = self.queue.pop() {
            if ev.time > horizon {
                break;
            }
            now = ev.time;
            self.stats.events += 1;
            match ev.event {
                Event::Deliver { to, env } => self.deliver(to, env, now),
                Event::Timer { node, timer } => self.on_timer(now, node, timer),
                Event::Inject { tx } => {
                    for n in self.nodes.iter_mut().flatten() {
                        n.inject(now, tx);
                    }
                    self.log(TranscriptEvent::Inject { t: now, tx });
                }
                Event::Corrupt { node } => {
                    self.nodes[node.0 as usize] = None;
                    self.log(TranscriptEvent::Corrupt { t: now, node });
                }
                Event::Heal => {
                    snapshot_heal(&self.nodes, &mut self.heal);
                    self.log(TranscriptEvent::Heal { t: now });
                }
            }
            since_check += 1;
            if since_check >= 256 {
                since_check = 0;
                if self.complete() {
                    finished = true;
                    break;
                }
            }
        }
        finished = finished || self.complete();
        self.stats.end_time = now;
        self.stats.fingerprint = Digest(self.digest.clone().finalize().into()).to_hex();
        self.stats.wall_ms = started.elapsed().as_millis() as u64;
        let report = build_report(&self.sc, &self.reg, &self.nodes, &self.heal, self.stats.clone(), self.transcript.take());
        if finished {
            Ok(report)
        } else {
            Err(SimError::HorizonExceeded { time: now, report: Box::new(report) })
        }
    }
}

/// Convenience wrapper: validate, build and run.
pub fn run(sc: Scenario) -> Result<RunReport, SimError> {
    Simulation::new(sc)?.run()
}

/// Drives fresh nodes through a recorded transcript, ignoring everything
/// they would send, and rebuilds the report.
pub fn replay(sc: &Scenario, events: &[TranscriptEvent]) -> Result<RunReport, SimError> {
    sc.validate()?;
    let reg = Arc::new(Registry::new(sc)?);
    let mut nodes: Vec<Option<CorrectNode>> =
        (0..sc.nodes as u64).map(|i| Some(CorrectNode::new(NodeId(i), reg.clone()))).collect();
    let mut heal = HealRounds::new();
    let mut sink = Vec::new();
    let mut end = 0;
    for ev in events {
        match ev {
            TranscriptEvent::Boot { node, offset } => {
                if let Some(n) = nodes[node.0 as usize].as_mut() {
                    n.boot(*offset, &mut sink);
                }
            }
            TranscriptEvent::Deliver { t, to, payload } => {
                end = *t;
                if let Some(n) = nodes[to.0 as usize].as_mut() {
                    n.on_message(*t, payload, &mut sink);
                }
            }
            TranscriptEvent::Timer { t, node, timer } => {
                end = *t;
                if let Some(n) = nodes[node.0 as usize].as_mut() {
                    n.on_timer(*t, *timer, &mut sink);
                }
            }
            TranscriptEvent::Inject { t, tx } => {
                for n in nodes.iter_mut().flatten() {
                    n.inject(*t, *tx);
                }
            }
            TranscriptEvent::Corrupt { node, .. } => nodes[node.0 as usize] = None,
            TranscriptEvent::Heal { .. } => snapshot_heal(&nodes, &mut heal),
        }
        sink.clear();
    }
    let stats = RunStats { end_time: end, ..RunStats::default() };
    Ok(build_report(sc, &reg, &nodes, &heal, stats, None))
}
