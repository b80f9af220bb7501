use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use super::{
    grade, height_count, less_count, validate_phi, Criteria, DeliveryBatch, DeliveryMode, Grade,
    HeightEntry, OrderingError,
};
use crate::crypto::Digest;
use crate::lattice::Block;
use crate::ChainId;

#[derive(Clone, Debug)]
struct Entry {
    chain: ChainId,
    height: u64,
    refs: Vec<Digest>,
}

/// Everything the criteria need, recomputed from the pending set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot {
    pub candidates: Vec<Digest>,
    pub ans: BTreeMap<Digest, BTreeSet<ChainId>>,
    pub global_ans: BTreeSet<ChainId>,
    pub ahv: BTreeMap<Digest, Vec<HeightEntry>>,
}

/// Reference ordering that recomputes all potentials from scratch on every
/// event, straight from the definitions.
#[derive(Clone, Debug)]
pub struct NaiveOrdering {
    n: usize,
    phi: usize,
    blocks: HashMap<Digest, Entry>,
    pending: BTreeSet<Digest>,
    delivered: HashSet<Digest>,
    next_index: u64,
}

impl NaiveOrdering {
    pub fn new(n: usize, phi: usize) -> Result<NaiveOrdering, OrderingError> {
        validate_phi(n, phi)?;
        Ok(NaiveOrdering {
            n,
            phi,
            blocks: HashMap::new(),
            pending: BTreeSet::new(),
            delivered: HashSet::new(),
            next_index: 0,
        })
    }

    /// Runs a whole arrival sequence and returns the batches.
    pub fn order(n: usize, phi: usize, blocks: &[Block]) -> Result<Vec<DeliveryBatch>, OrderingError> {
        let mut s = NaiveOrdering::new(n, phi)?;
        let mut out = Vec::new();
        for b in blocks {
            out.extend(s.receive_block(b)?);
        }
        Ok(out)
    }

    /// Records `block` as already delivered, without emitting it.
    pub fn mark_delivered(&mut self, block: &Block) {
        let refs = block.references().map(|(_, _, h)| h).collect();
        self.blocks.insert(block.hash, Entry { chain: block.chain, height: block.height, refs });
        self.delivered.insert(block.hash);
    }

    /// Adds a block to the pending set without delivering anything.
    pub fn insert(&mut self, block: &Block) -> Result<(), OrderingError> {
        if block.chain as usize >= self.n {
            return Err(OrderingError::UnknownChain { chain: block.chain, n: self.n });
        }
        if self.blocks.contains_key(&block.hash) {
            return Ok(());
        }
        let refs: Vec<Digest> = block.references().map(|(_, _, h)| h).collect();
        if refs.iter().any(|h| !self.blocks.contains_key(h)) {
            return Err(OrderingError::NotCausal(block.hash));
        }
        self.blocks.insert(block.hash, Entry { chain: block.chain, height: block.height, refs });
        self.pending.insert(block.hash);
        Ok(())
    }

    pub fn receive_block(&mut self, block: &Block) -> Result<Vec<DeliveryBatch>, OrderingError> {
        self.insert(block)?;
        Ok(self.deliver_ready())
    }

    /// Delivers while the criteria hold.
    pub fn deliver_ready(&mut self) -> Vec<DeliveryBatch> {
        let mut out = Vec::new();
        loop {
            let snap = self.snapshot();
            let a = self.preceding_of(&snap);
            let mode = match self.criteria_of(&snap, &a) {
                Criteria::NoOutput => break,
                Criteria::Normal => DeliveryMode::Normal,
                Criteria::Early => DeliveryMode::Early,
            };
            let mut blocks: Vec<Digest> = a.into_iter().collect();
            blocks.sort();
            for h in &blocks {
                self.pending.remove(h);
                self.delivered.insert(*h);
            }
            out.push(DeliveryBatch { index: self.next_index, mode, blocks, config: 0 });
            self.next_index += 1;
        }
        out
    }

    /// For every pending block, the pending blocks it reaches.
    fn closure(&self) -> HashMap<Digest, HashSet<Digest>> {
        let mut memo: HashMap<Digest, HashSet<Digest>> = HashMap::new();
        for start in &self.pending {
            let mut stack = vec![(*start, false)];
            while let Some((h, expanded)) = stack.pop() {
                if memo.contains_key(&h) {
                    continue;
                }
                let refs: Vec<Digest> = self.blocks[&h]
                    .refs
                    .iter()
                    .filter(|r| self.pending.contains(r))
                    .copied()
                    .collect();
                if expanded {
                    let mut set = HashSet::new();
                    for r in &refs {
                        set.insert(*r);
                        set.extend(memo[r].iter().copied());
                    }
                    memo.insert(h, set);
                } else {
                    stack.push((h, true));
                    stack.extend(refs.into_iter().filter(|r| !memo.contains_key(r)).map(|r| (r, false)));
                }
            }
        }
        memo
    }

    pub fn snapshot(&self) -> Snapshot {
        let reach = self.closure();
        let mut candidates: Vec<Digest> = self
            .pending
            .iter()
            .filter(|h| self.blocks[*h].refs.iter().all(|r| self.delivered.contains(r)))
            .copied()
            .collect();
        candidates.sort_by_key(|h| self.blocks[h].chain);
        let mut ans = BTreeMap::new();
        for c in &candidates {
            let mut set = BTreeSet::from([self.blocks[c].chain]);
            for p in &self.pending {
                if reach[p].contains(c) {
                    set.insert(self.blocks[p].chain);
                }
            }
            ans.insert(*c, set);
        }
        let global_ans: BTreeSet<ChainId> = ans.values().flatten().copied().collect();
        let mut lowest: BTreeMap<ChainId, (u64, Digest)> = BTreeMap::new();
        for p in &self.pending {
            let e = &self.blocks[p];
            let slot = lowest.entry(e.chain).or_insert((e.height, *p));
            if e.height < slot.0 {
                *slot = (e.height, *p);
            }
        }
        let mut ahv = BTreeMap::new();
        for c in &candidates {
            let v = (0..self.n as ChainId)
                .map(|q| {
                    if !global_ans.contains(&q) {
                        return HeightEntry::Undefined;
                    }
                    match lowest.get(&q) {
                        Some(&(k, low)) if low == *c || reach[&low].contains(c) => HeightEntry::Height(k),
                        _ => HeightEntry::Infinity,
                    }
                })
                .collect();
            ahv.insert(*c, v);
        }
        Snapshot { candidates, ans, global_ans, ahv }
    }

    fn grade_of(&self, snap: &Snapshot, a: &Digest, b: &Digest) -> Grade {
        grade(&snap.ahv[a], &snap.ahv[b], self.phi, self.n, snap.global_ans.len())
    }

    pub fn preceding_of(&self, snap: &Snapshot) -> BTreeSet<Digest> {
        snap.candidates
            .iter()
            .filter(|b| snap.candidates.iter().all(|x| self.grade_of(snap, x, b) == Grade::Zero))
            .copied()
            .collect()
    }

    pub fn criteria_of(&self, snap: &Snapshot, a: &BTreeSet<Digest>) -> Criteria {
        if a.is_empty() {
            return Criteria::NoOutput;
        }
        if snap.global_ans.len() == self.n {
            return Criteria::Normal;
        }
        let rest: Vec<&Digest> = snap.candidates.iter().filter(|c| !a.contains(c)).collect();
        if !rest.is_empty() && self.internally_stable(snap, a) {
            Criteria::Early
        } else {
            Criteria::NoOutput
        }
    }

    fn internally_stable(&self, snap: &Snapshot, a: &BTreeSet<Digest>) -> bool {
        snap.candidates
            .iter()
            .filter(|c| !a.contains(c))
            .all(|b| a.iter().any(|x| self.grade_of(snap, x, b) == Grade::One))
    }

    /// The criteria before simplification: internal stability together with
    /// either every chain represented, or some preceding block acked by
    /// more than `phi` chains while every preceding block has at least
    /// `n - phi` ackers.
    pub fn full_criteria(&self, snap: &Snapshot, a: &BTreeSet<Digest>) -> Option<Criteria> {
        if a.is_empty() || !self.internally_stable(snap, a) {
            return None;
        }
        if snap.global_ans.len() == self.n {
            return Some(Criteria::Normal);
        }
        let some_strong = a.iter().any(|b| height_count(&snap.ahv[b]) > self.phi);
        let all_wide = a.iter().all(|b| snap.ans[b].len() >= self.n - self.phi);
        (some_strong && all_wide).then_some(Criteria::Early)
    }

    pub fn matrix(&self, snap: &Snapshot) -> BTreeMap<(Digest, Digest), u32> {
        let mut out = BTreeMap::new();
        for x in &snap.candidates {
            for y in &snap.candidates {
                out.insert((*x, *y), less_count(&snap.ahv[x], &snap.ahv[y]) as u32);
            }
        }
        out
    }

    pub fn chains(&self) -> usize {
        self.n
    }

    pub fn phi(&self) -> usize {
        self.phi
    }
}
