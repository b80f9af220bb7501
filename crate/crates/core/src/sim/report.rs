use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::context::Registry;
use super::node::{CompactionRow, CorrectNode, DecisionRecord, NodeCounters};
use super::run::{HealRounds, TranscriptEvent};
use super::scenario::{ms, Scenario, MS};
use crate::ba::BaValue;
use crate::chain::{transaction_digest, verify_compaction, verify_notarization, LoadBalancer};
use crate::crypto::Digest;
use crate::lattice::Block;
use crate::ordering::DeliveryBatch;
use crate::{ChainId, NodeId, SimTime};

/// Counters collected by the event loop.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub events: u64,
    pub deliveries: u64,
    pub duplicates: u64,
    /// Messages originated by correct nodes.
    pub messages: u64,
    /// Point-to-point sends, relays included.
    pub sends: u64,
    /// Messages injected by Byzantine nodes.
    pub adversary_messages: u64,
    pub end_time: SimTime,
    /// Hash over every processed event; equal for equal runs.
    pub fingerprint: String,
    pub wall_ms: u64,
}

/// Agreement outcome of one `(chain, height)` across correct nodes.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct HeightRecord {
    pub chain: ChainId,
    pub height: u64,
    pub value: BaValue,
    /// Hash of the settled block, empty blocks included.
    pub block: Option<Digest>,
    pub min_round: u64,
    pub max_round: u64,
    /// Latest decision minus that node's start, in λ, over correct nodes
    /// that ran agreement from the start.
    pub latency: f64,
    /// Spread of the correct members' start times.
    pub start_spread: SimTime,
    /// Byzantine members of the height's notary set.
    pub byzantine: usize,
    /// Highest round the theory allows here, when it makes a claim.
    pub bound: Option<u64>,
    pub deciders: usize,
}

impl HeightRecord {
    pub fn within_bound(&self) -> bool {
        self.bound.is_none_or(|b| self.max_round <= b)
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct NodeReport {
    pub id: NodeId,
    pub batches: Vec<DeliveryBatch>,
    pub compaction: Vec<CompactionRow>,
    pub counters: NodeCounters,
    /// Settled height per chain.
    pub heights: Vec<u64>,
    pub decisions: Vec<((ChainId, u64), DecisionRecord)>,
}

/// A broken in-run invariant.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Violation {
    pub kind: String,
    pub detail: String,
}

impl Violation {
    fn new(kind: &str, detail: String) -> Violation {
        Violation { kind: kind.to_string(), detail }
    }
}

/// Everything a run produced, enough to re-check every property offline.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub stats: RunStats,
    pub heights: Vec<HeightRecord>,
    pub nodes: Vec<NodeReport>,
    /// Settled blocks at height ≥ 1 checked for a parent notarization, and
    /// how many of those verified.
    pub notarized_blocks: u64,
    pub notarizations_verified: u64,
    pub compaction_confirmations: u64,
    /// Transactions found in settled blocks, and how many appeared twice.
    pub packed_transactions: u64,
    pub duplicate_transactions: u64,
    /// Pairs of consecutive compaction rows whose consensus timestamp
    /// went backwards.
    pub timestamp_regressions: u64,
    pub violations: Vec<Violation>,
    /// Settled chains as seen by the first correct node.
    #[serde(skip)]
    pub chains: Vec<Vec<Block>>,
    #[serde(skip)]
    pub transcript: Option<Vec<TranscriptEvent>>,
}

fn value_label(v: &BaValue) -> String {
    match v {
        BaValue::Block(d) => d.to_hex(),
        BaValue::Bottom => "bottom".into(),
        BaValue::Skip => "skip".into(),
    }
}

fn overlaps(sc: &Scenario, from: SimTime, to: SimTime) -> bool {
    let lambda = sc.lambda();
    sc.partitions.iter().any(|p| from <= ms(p.end_ms) + lambda && to >= ms(p.start_ms))
}

pub(crate) fn build_report(
    sc: &Scenario,
    reg: &Registry,
    nodes: &[Option<CorrectNode>],
    heal: &HealRounds,
    stats: RunStats,
    transcript: Option<Vec<TranscriptEvent>>,
) -> RunReport {
    let correct: Vec<&CorrectNode> = nodes
        .iter()
        .flatten()
        .filter(|n| !sc.is_byzantine(n.id))
        .collect();
    let mut violations = Vec::new();
    for n in &correct {
        for f in n.faults() {
            violations.push(Violation::new("node-fault", format!("{}: {f}", n.id)));
        }
    }

    // Agreement on decided values and on settled blocks.
    let mut by_height: BTreeMap<(ChainId, u64), Vec<(NodeId, DecisionRecord)>> = BTreeMap::new();
    for n in &correct {
        for (k, d) in n.decisions() {
            by_height.entry(*k).or_default().push((n.id, *d));
        }
    }
    let mut heights = Vec::with_capacity(by_height.len());
    let lambda = sc.lambda() as f64;
    for ((chain, height), ds) in &by_height {
        let (first, d0) = ds[0];
        for (id, d) in &ds[1..] {
            if d.value != d0.value {
                violations.push(Violation::new(
                    "agreement",
                    format!("{chain}/{height}: {first} decided {} but {id} decided {}", value_label(&d0.value), value_label(&d.value)),
                ));
            }
        }
        let block = correct
            .iter()
            .find_map(|n| n.settled(*chain).get(*height as usize).map(|b| b.hash));
        if let Some(b) = block {
            for n in &correct {
                if let Some(other) = n.settled(*chain).get(*height as usize) {
                    if other.hash != b {
                        violations.push(Violation::new("agreement", format!("{chain}/{height}: settled blocks differ at {}", n.id)));
                    }
                }
            }
        }
        let epoch = reg.epoch_of(*height);
        let members = reg.notary(*chain, epoch);
        let byzantine = members.iter().filter(|m| sc.is_byzantine(**m)).count();
        let starts: Vec<SimTime> = correct
            .iter()
            .filter(|n| members.contains(&n.id))
            .filter_map(|n| n.decisions().get(&(*chain, *height)).and_then(|d| d.start))
            .collect();
        let start_spread = match (starts.iter().min(), starts.iter().max()) {
            (Some(a), Some(b)) => b - a,
            _ => 0,
        };
        let machine: Vec<&DecisionRecord> = ds.iter().map(|x| &x.1).filter(|d| d.by_machine && d.start.is_some()).collect();
        let latency = machine
            .iter()
            .map(|d| (d.time - d.start.expect("filtered")) as f64 / lambda)
            .fold(0.0, f64::max);
        let max_round = ds.iter().map(|x| x.1.round).max().unwrap_or(0);
        let min_round = ds.iter().map(|x| x.1.round).min().unwrap_or(0);
        let first_start = starts.iter().min().copied().unwrap_or(0);
        let last_decide = ds.iter().map(|x| x.1.time).max().unwrap_or(0);
        let t = byzantine as u64;
        let bound = if !overlaps(sc, first_start, last_decide) {
            (start_spread <= sc.lambda()).then_some(t + 1)
        } else if sc.partitions.iter().all(|p| ms(p.end_ms) <= last_decide) {
            let r = heal.get(&(*chain, *height)).copied().unwrap_or(1);
            Some(r + t + 1)
        } else {
            None
        };
        heights.push(HeightRecord {
            chain: *chain,
            height: *height,
            value: d0.value,
            block,
            min_round,
            max_round,
            latency,
            start_spread,
            byzantine,
            bound,
            deciders: ds.len(),
        });
    }

    // Chain integrity, load balancer and compaction confirmations, checked
    // on every correct node's settled chains.
    let mut notarized_blocks = 0;
    let mut notarizations_verified = 0;
    let mut compaction_confirmations = 0;
    let mut packed_transactions = 0;
    let mut duplicate_transactions = 0;
    let balancer = LoadBalancer::with_change(reg.initial_chains, reg.change);
    let arrivals: HashMap<Digest, SimTime> = sc
        .transactions
        .iter()
        .flat_map(|t| (0..t.count).map(|i| (transaction_digest(sc.seed, i), ms(t.start_ms + t.interval_ms * i as f64))))
        .collect();
    for (i, n) in correct.iter().enumerate() {
        let mut seen_tx: HashMap<Digest, (ChainId, u64)> = HashMap::new();
        for chain in 0..reg.max_chains {
            let settled = n.settled(chain);
            for (h, b) in settled.iter().enumerate().skip(1) {
                let parent = &settled[h - 1];
                let group = &reg.group(reg.epoch_of(h as u64 - 1), chain).public;
                notarized_blocks += 1;
                match &b.parent_notarization {
                    Some(sig) if verify_notarization(group, parent, sig) => notarizations_verified += 1,
                    _ => violations.push(Violation::new(
                        "chain-integrity",
                        format!("{}: {chain}/{h} does not carry a valid notarization of its parent", n.id),
                    )),
                }
            }
            for b in settled {
                for tx in &b.payload.transactions {
                    if i == 0 {
                        packed_transactions += 1;
                    }
                    let home = arrivals.get(tx).map(|at| balancer.home(tx, *at, b.timestamp));
                    if home != Some(chain) {
                        violations.push(Violation::new("load-balancer", format!("{}: {tx} packed on chain {chain}", n.id)));
                    }
                    if let Some(prev) = seen_tx.insert(*tx, (chain, b.height)) {
                        if i == 0 {
                            duplicate_transactions += 1;
                        }
                        violations.push(Violation::new(
                            "load-balancer",
                            format!("{}: {tx} packed at {}/{} and {chain}/{}", n.id, prev.0, prev.1, b.height),
                        ));
                    }
                }
                for c in &b.payload.confirmations {
                    if i == 0 {
                        compaction_confirmations += 1;
                    }
                    let ok = verify_compaction(&reg.group(c.epoch, 0).public, c)
                        && n.compaction().get(c.entry.height as usize).is_none_or(|row| {
                            row.block == c.entry.block && row.consensus_timestamp == c.entry.consensus_timestamp
                        });
                    if !ok {
                        violations.push(Violation::new(
                            "compaction",
                            format!("{}: confirmation of compaction height {} does not verify", n.id, c.entry.height),
                        ));
                    }
                }
            }
        }
    }

    // Total order: every pair of correct nodes agrees on the common prefix.
    if let Some(reference) = correct.iter().max_by_key(|n| n.batches().len()) {
        for n in &correct {
            if let Some(i) = n.batches().iter().zip(reference.batches()).position(|(a, b)| a != b) {
                violations.push(Violation::new(
                    "ordering",
                    format!("{} and {} deliver different batch {i}", n.id, reference.id),
                ));
            }
        }
    }
    let mut timestamp_regressions = 0;
    if let Some(reference) = correct.iter().max_by_key(|n| n.compaction().len()) {
        for n in &correct {
            if let Some(i) = n.compaction().iter().zip(reference.compaction()).position(|(a, b)| a != b) {
                violations.push(Violation::new(
                    "ordering",
                    format!("{} and {} disagree at compaction height {i}", n.id, reference.id),
                ));
            }
        }
        let regressions = reference
            .compaction()
            .windows(2)
            .filter(|w| w[1].consensus_timestamp < w[0].consensus_timestamp)
            .count() as u64;
        timestamp_regressions = regressions;
        if regressions > 0 && (sc.monotone_timestamps || reg.change.is_none()) {
            violations.push(Violation::new("timestamp", format!("{regressions} consensus timestamps go backwards")));
        }
    }

    let nodes = correct
        .iter()
        .map(|n| NodeReport {
            id: n.id,
            batches: n.batches().to_vec(),
            compaction: n.compaction().to_vec(),
            counters: n.counters(),
            heights: (0..reg.max_chains).map(|c| n.height(c)).collect(),
            decisions: n.decisions().iter().map(|(k, v)| (*k, *v)).collect(),
        })
        .collect();

    RunReport {
        scenario: sc.clone(),
        stats,
        heights,
        nodes,
        notarized_blocks,
        notarizations_verified,
        compaction_confirmations,
        packed_transactions,
        duplicate_transactions,
        timestamp_regressions,
        violations,
        chains: correct
            .first()
            .map(|n| (0..reg.max_chains).map(|c| n.settled(c).to_vec()).collect())
            .unwrap_or_default(),
        transcript,
    }
}

fn fmt_ms(t: SimTime) -> String {
    format!("{:.3}", t as f64 / MS as f64)
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// Mean of the deciding round over all heights.
    pub fn mean_rounds(&self) -> f64 {
        if self.heights.is_empty() {
            return 0.0;
        }
        self.heights.iter().map(|h| h.max_round as f64).sum::<f64>() / self.heights.len() as f64
    }

    pub fn max_rounds(&self) -> u64 {
        self.heights.iter().map(|h| h.max_round).max().unwrap_or(0)
    }

    pub fn max_latency(&self) -> f64 {
        self.heights.iter().map(|h| h.latency).fold(0.0, f64::max)
    }

    pub fn equivocations(&self) -> u64 {
        self.nodes.iter().map(|n| n.counters.equivocations).sum()
    }

    /// Rows of `summary.csv`.
    pub fn summary(&self) -> Vec<(String, String)> {
        let sc = &self.scenario;
        let bounded = self.heights.iter().filter(|h| h.bound.is_some()).count();
        let within = self.heights.iter().filter(|h| h.bound.is_some() && h.within_bound()).count();
        let rows: Vec<(&str, String)> = vec![
            ("scenario", sc.name.clone()),
            ("seed", sc.seed.to_string()),
            ("nodes", sc.nodes.to_string()),
            ("chains", sc.chains.to_string()),
            ("byzantine", sc.adversary.byzantine.len().to_string()),
            ("behavior", format!("{:?}", sc.adversary.behavior)),
            ("lambda_ms", sc.lambda_ms.to_string()),
            ("end_time_ms", fmt_ms(self.stats.end_time)),
            ("events", self.stats.events.to_string()),
            ("deliveries", self.stats.deliveries.to_string()),
            ("messages", self.stats.messages.to_string()),
            ("adversary_messages", self.stats.adversary_messages.to_string()),
            ("decided_heights", self.heights.len().to_string()),
            ("mean_rounds", format!("{:.4}", self.mean_rounds())),
            ("max_rounds", self.max_rounds().to_string()),
            ("max_latency_lambda", format!("{:.3}", self.max_latency())),
            ("heights_with_round_bound", bounded.to_string()),
            ("heights_within_round_bound", within.to_string()),
            ("notarized_blocks", self.notarized_blocks.to_string()),
            ("notarizations_verified", self.notarizations_verified.to_string()),
            ("compaction_confirmations", self.compaction_confirmations.to_string()),
            ("packed_transactions", self.packed_transactions.to_string()),
            ("duplicate_transactions", self.duplicate_transactions.to_string()),
            ("timestamp_regressions", self.timestamp_regressions.to_string()),
            ("equivocations_seen", self.equivocations().to_string()),
            ("violations", self.violations.len().to_string()),
            ("fingerprint", self.stats.fingerprint.clone()),
            ("wall_ms", self.stats.wall_ms.to_string()),
        ];
        rows.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Writes the report as a directory of CSV and log files.
    pub fn write_dir(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut summary = String::from("key,value\n");
        for (k, v) in self.summary() {
            let _ = writeln!(summary, "{k},{v}");
        }
        fs::write(dir.join("summary.csv"), summary)?;
        fs::write(dir.join("scenario.toml"), self.scenario.to_toml())?;

        let mut w = BufWriter::new(fs::File::create(dir.join("heights.csv"))?);
        writeln!(w, "chain,height,value,block,min_round,max_round,bound,latency_lambda,start_spread_ms,byzantine,deciders")?;
        for h in &self.heights {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{:.3},{},{},{}",
                h.chain,
                h.height,
                value_label(&h.value),
                h.block.map(|b| b.to_hex()).unwrap_or_default(),
                h.min_round,
                h.max_round,
                h.bound.map(|b| b.to_string()).unwrap_or_default(),
                h.latency,
                fmt_ms(h.start_spread),
                h.byzantine,
                h.deciders
            )?;
        }
        w.flush()?;

        let mut w = BufWriter::new(fs::File::create(dir.join("decisions.csv"))?);
        writeln!(w, "node,chain,height,value,round,time_ms,start_ms,by_machine")?;
        for n in &self.nodes {
            for ((c, h), d) in &n.decisions {
                writeln!(
                    w,
                    "{},{c},{h},{},{},{},{},{}",
                    n.id.0,
                    value_label(&d.value),
                    d.round,
                    fmt_ms(d.time),
                    d.start.map(fmt_ms).unwrap_or_default(),
                    d.by_machine
                )?;
            }
        }
        w.flush()?;

        for n in &self.nodes {
            let nd = dir.join("nodes").join(format!("node-{}", n.id.0));
            fs::create_dir_all(&nd)?;
            let mut w = BufWriter::new(fs::File::create(nd.join("batches.log"))?);
            for b in &n.batches {
                writeln!(w, "{}", b.log_line())?;
            }
            w.flush()?;
            let mut w = BufWriter::new(fs::File::create(nd.join("compaction.csv"))?);
            writeln!(w, "height,block,chain,block_timestamp,consensus_timestamp")?;
            for r in &n.compaction {
                writeln!(w, "{},{},{},{},{}", r.height, r.block.to_hex(), r.chain, r.block_timestamp, r.consensus_timestamp)?;
            }
            w.flush()?;
        }

        let mut text = String::new();
        for v in &self.violations {
            let _ = writeln!(text, "{}: {}", v.kind, v.detail);
        }
        fs::write(dir.join("violations.txt"), text)?;

        if let Some(events) = &self.transcript {
            let mut w = BufWriter::new(fs::File::create(dir.join("transcript.jsonl"))?);
            for e in events {
                serde_json::to_writer(&mut w, e).map_err(io::Error::other)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

/// Reads `transcript.jsonl` written by [`RunReport::write_dir`].
pub fn read_transcript(path: &Path) -> io::Result<Vec<TranscriptEvent>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}

/// First place where two logs of the same kind disagree.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Divergence {
    pub file: PathBuf,
    pub reference: PathBuf,
    /// Zero-based line index, header excluded.
    pub index: usize,
    pub found: String,
    pub expected: String,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} diverges from {} at index {}: found {:?}, expected {:?}",
            self.file.display(),
            self.reference.display(),
            self.index,
            self.found,
            self.expected
        )
    }
}

fn log_lines(path: &Path, header: bool) -> io::Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().skip(header as usize).map(str::to_string).collect())
}

/// Compares every node's batch log and compaction rows across report
/// directories. Logs may stop at different points; they must agree on
/// their common prefix.
pub fn compare_report_dirs(dirs: &[PathBuf]) -> io::Result<Result<usize, Divergence>> {
    let mut compared = 0;
    for (name, header) in [("batches.log", false), ("compaction.csv", true)] {
        let mut logs: Vec<(PathBuf, Vec<String>)> = Vec::new();
        for d in dirs {
            let nodes = d.join("nodes");
            let mut entries: Vec<PathBuf> = fs::read_dir(&nodes)?.map(|e| e.map(|e| e.path())).collect::<io::Result<_>>()?;
            entries.sort();
            for e in entries {
                let p = e.join(name);
                if p.exists() {
                    let lines = log_lines(&p, header)?;
                    logs.push((p, lines));
                }
            }
        }
        let Some(longest) = logs.iter().max_by_key(|l| l.1.len()) else {
            continue;
        };
        for (path, lines) in &logs {
            if let Some(i) = lines.iter().zip(&longest.1).position(|(a, b)| a != b) {
                return Ok(Err(Divergence {
                    file: path.clone(),
                    reference: longest.0.clone(),
                    index: i,
                    found: lines[i].clone(),
                    expected: longest.1[i].clone(),
                }));
            }
            if name == "batches.log" {
                for (i, l) in lines.iter().enumerate() {
                    if DeliveryBatch::parse_log_line(l).is_none_or(|b| b.index != i as u64) {
                        return Ok(Err(Divergence {
                            file: path.clone(),
                            reference: path.clone(),
                            index: i,
                            found: l.clone(),
                            expected: format!("batch {i}"),
                        }));
                    }
                }
            }
            compared += 1;
        }
    }
    Ok(Ok(compared))
}
