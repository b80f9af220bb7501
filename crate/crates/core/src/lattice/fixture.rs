//! Line-oriented lattice fixtures.
//!
//! One block per line: `chain,height,proposer,timestamp,acks=chain:height;...`.
//! Chains and proposers are integers or single letters (`A` = 0). Blank
//! lines and `#` comments are ignored. Hashes are derived, so a fixture
//! names blocks only by position.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use super::block::{AckField, Block, Payload};
use crate::crypto::Digest;
use crate::{ChainId, NodeId, SimTime};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixtureError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("block {chain}:{height} defined twice")]
    Duplicate { chain: ChainId, height: u64 },
    #[error("block {chain}:{height} refers to missing {missing_chain}:{missing_height}")]
    Missing { chain: ChainId, height: u64, missing_chain: ChainId, missing_height: u64 },
    #[error("fixture contains a reference cycle through {chain}:{height}")]
    Cycle { chain: ChainId, height: u64 },
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Record {
    pub chain: ChainId,
    pub height: u64,
    pub proposer: NodeId,
    pub timestamp: SimTime,
    pub acks: Vec<(ChainId, u64)>,
}

impl Record {
    pub fn new(chain: ChainId, height: u64, acks: &[(ChainId, u64)]) -> Record {
        Record {
            chain,
            height,
            proposer: NodeId(chain as u64),
            timestamp: height,
            acks: acks.to_vec(),
        }
    }
}

fn parse_id(s: &str) -> Option<u64> {
    let s = s.trim();
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_uppercase() => Some(c as u64 - 'A' as u64),
        _ => s.parse().ok(),
    }
}

pub fn parse_records(text: &str) -> Result<Vec<Record>, FixtureError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: &str| FixtureError::Syntax { line: line_no, message: message.to_string() };
        let fields: Vec<&str> = line.splitn(5, ',').collect();
        if fields.len() < 4 {
            return Err(err("expected chain,height,proposer,timestamp[,acks=...]"));
        }
        let chain = parse_id(fields[0]).ok_or_else(|| err("bad chain"))? as ChainId;
        let height = fields[1].trim().parse().map_err(|_| err("bad height"))?;
        let proposer = NodeId(parse_id(fields[2]).ok_or_else(|| err("bad proposer"))?);
        let timestamp = fields[3].trim().parse().map_err(|_| err("bad timestamp"))?;
        let mut acks = Vec::new();
        if let Some(field) = fields.get(4) {
            let list = field.trim().strip_prefix("acks=").ok_or_else(|| err("expected acks="))?;
            for item in list.split(';').map(str::trim).filter(|s| !s.is_empty()) {
                let (c, h) = item.split_once(':').ok_or_else(|| err("ack must be chain:height"))?;
                let c = parse_id(c).ok_or_else(|| err("bad ack chain"))? as ChainId;
                let h = h.trim().parse().map_err(|_| err("bad ack height"))?;
                acks.push((c, h));
            }
        }
        out.push(Record { chain, height, proposer, timestamp, acks });
    }
    Ok(out)
}

/// Blocks built from records, with lookup by position.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub blocks: Vec<Block>,
    positions: HashMap<(ChainId, u64), Digest>,
}

impl Fixture {
    pub fn parse(text: &str) -> Result<Fixture, FixtureError> {
        Fixture::from_records(&parse_records(text)?)
    }

    pub fn from_records(records: &[Record]) -> Result<Fixture, FixtureError> {
        let mut by_pos: BTreeMap<(ChainId, u64), usize> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if by_pos.insert((r.chain, r.height), i).is_some() {
                return Err(FixtureError::Duplicate { chain: r.chain, height: r.height });
            }
        }
        let mut built: HashMap<(ChainId, u64), Block> = HashMap::new();
        for r in records {
            build(records, &by_pos, &mut built, (r.chain, r.height))?;
        }
        let positions = built.iter().map(|(k, b)| (*k, b.hash)).collect();
        let blocks = records.iter().map(|r| built[&(r.chain, r.height)].clone()).collect();
        Ok(Fixture { blocks, positions })
    }

    pub fn hash_of(&self, chain: ChainId, height: u64) -> Option<Digest> {
        self.positions.get(&(chain, height)).copied()
    }

    pub fn block(&self, chain: ChainId, height: u64) -> Option<&Block> {
        let h = self.hash_of(chain, height)?;
        self.blocks.iter().find(|b| b.hash == h)
    }
}

fn build(
    records: &[Record],
    by_pos: &BTreeMap<(ChainId, u64), usize>,
    built: &mut HashMap<(ChainId, u64), Block>,
    root: (ChainId, u64),
) -> Result<(), FixtureError> {
    // Iterative post-order so deep chains do not exhaust the stack.
    let mut stack = vec![(root, false)];
    let mut on_path = std::collections::HashSet::new();
    while let Some((pos, expanded)) = stack.pop() {
        if built.contains_key(&pos) {
            continue;
        }
        let r = &records[by_pos[&pos]];
        let deps: Vec<(ChainId, u64)> = (r.height > 0)
            .then(|| (r.chain, r.height - 1))
            .into_iter()
            .chain(r.acks.iter().copied())
            .collect();
        if expanded {
            on_path.remove(&pos);
            let parent = (r.height > 0).then(|| built[&(r.chain, r.height - 1)].hash);
            let acks = r
                .acks
                .iter()
                .map(|p| AckField { chain: p.0, height: p.1, hash: built[p].hash })
                .collect();
            let b = Block::new(r.chain, r.height, 0, r.proposer, parent, acks, Payload::default(), r.timestamp, None);
            built.insert(pos, b);
            continue;
        }
        if !on_path.insert(pos) {
            return Err(FixtureError::Cycle { chain: pos.0, height: pos.1 });
        }
        stack.push((pos, true));
        for d in deps {
            if !by_pos.contains_key(&d) {
                return Err(FixtureError::Missing {
                    chain: r.chain,
                    height: r.height,
                    missing_chain: d.0,
                    missing_height: d.1,
                });
            }
            if !built.contains_key(&d) {
                if on_path.contains(&d) {
                    return Err(FixtureError::Cycle { chain: d.0, height: d.1 });
                }
                stack.push((d, false));
            }
        }
    }
    Ok(())
}

/// Renders blocks back into fixture lines.
pub fn to_text(blocks: &[Block]) -> String {
    let mut out = String::new();
    for b in blocks {
        let acks: Vec<String> = b.acks.iter().map(|a| format!("{}:{}", a.chain, a.height)).collect();
        let _ = writeln!(out, "{},{},{},{},acks={}", b.chain, b.height, b.proposer.0, b.timestamp, acks.join(";"));
    }
    out
}

/// Random lattice: each new block lands on a uniformly chosen chain and
/// acks the current tip of every other chain with probability `ack_prob`.
/// Timestamps grow with creation order.
pub fn random_records(seed: u64, chains: u32, count: usize, ack_prob: f64) -> Vec<Record> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut next = vec![0u64; chains as usize];
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let c = rng.random_range(0..chains);
        let acks: Vec<(ChainId, u64)> = (0..chains)
            .filter(|&o| o != c && next[o as usize] > 0 && rng.random_bool(ack_prob))
            .map(|o| (o, next[o as usize] - 1))
            .collect();
        out.push(Record {
            chain: c,
            height: next[c as usize],
            proposer: NodeId(c as u64),
            timestamp: (i as u64) * 10 + rng.random_range(0..10),
            acks,
        });
        next[c as usize] += 1;
    }
    out
}

/// A uniformly random arrival order that respects references.
pub fn causal_shuffle<R: rand::Rng>(blocks: &[Block], rng: &mut R) -> Vec<Block> {
    use std::collections::HashSet;
    let mut done: HashSet<Digest> = HashSet::new();
    let mut left: Vec<&Block> = blocks.iter().collect();
    let mut out = Vec::with_capacity(blocks.len());
    while !left.is_empty() {
        let ready: Vec<usize> = (0..left.len())
            .filter(|&i| left[i].references().all(|(_, _, h)| done.contains(&h)))
            .collect();
        assert!(!ready.is_empty(), "blocks refer to something outside the set");
        let pick = ready[rng.random_range(0..ready.len())];
        let b = left.swap_remove(pick);
        done.insert(b.hash);
        out.push(b.clone());
    }
    out
}
