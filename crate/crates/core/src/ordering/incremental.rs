use std::collections::{BTreeMap, HashMap, VecDeque};

use super::bits::ChainSet;
use super::{
    validate_phi, Criteria, DeliveryBatch, DeliveryMode, HeightEntry, OrderingError,
};
use crate::crypto::Digest;
use crate::lattice::Block;
use crate::ChainId;

#[derive(Clone, Debug)]
struct Pending {
    hash: Digest,
    height: u64,
    refs: Vec<(ChainId, u64)>,
    arrival: u64,
    /// Chains whose candidate this block reaches.
    reach: ChainSet,
}

/// Incremental total ordering for one node.
///
/// Pending blocks of a chain are a contiguous run of heights above the
/// delivered prefix, so each chain has at most one candidate: its lowest
/// pending block. A chain's pending blocks that reach a candidate form an
/// upward-closed run too, so only the lowest one matters for the acking
/// height vector. Writing `S(b)` for the chains whose lowest pending block
/// reaches candidate `b`, the pairwise count is `c(x, y) = |S(x) \ S(y)|`,
/// and it only moves when a chain gains its first pending block or on a
/// delivery.
#[derive(Clone, Debug)]
pub struct OrderingState {
    n: usize,
    phi: usize,
    /// Delivered prefix length per chain, i.e. the lowest undelivered height.
    base: Vec<u64>,
    pending: Vec<VecDeque<Pending>>,
    known: HashMap<Digest, ChainId>,
    is_candidate: Vec<bool>,
    /// Lowest pending height of each chain that reaches candidate `c`.
    first_reach: Vec<Vec<Option<u64>>>,
    lowest_reach: Vec<ChainSet>,
    /// Row-major `n × n`; only candidate pairs are meaningful.
    matrix: Vec<u32>,
    ans: ChainSet,
    arrivals: u64,
    next_index: u64,
    config: u32,
    ops: u64,
}

impl OrderingState {
    pub fn new(n: usize, phi: usize) -> Result<OrderingState, OrderingError> {
        OrderingState::with_base(n, phi, vec![0; n], 0, 0)
    }

    /// A state whose chains start delivered up to `base`, numbering batches
    /// from `first_index`.
    pub fn with_base(
        n: usize,
        phi: usize,
        base: Vec<u64>,
        first_index: u64,
        config: u32,
    ) -> Result<OrderingState, OrderingError> {
        validate_phi(n, phi)?;
        assert_eq!(base.len(), n, "base must cover every chain");
        Ok(OrderingState {
            n,
            phi,
            base,
            pending: vec![VecDeque::new(); n],
            known: HashMap::new(),
            is_candidate: vec![false; n],
            first_reach: vec![vec![None; n]; n],
            lowest_reach: vec![ChainSet::with_capacity(n); n],
            matrix: vec![0; n * n],
            ans: ChainSet::with_capacity(n),
            arrivals: 0,
            next_index: first_index,
            config,
            ops: 0,
        })
    }

    pub fn chains(&self) -> usize {
        self.n
    }

    pub fn phi(&self) -> usize {
        self.phi
    }

    /// Elementary work performed so far (set-word merges and matrix cells).
    pub fn ops(&self) -> u64 {
        self.ops
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    pub fn delivered_heights(&self) -> &[u64] {
        &self.base
    }

    pub fn pending_len(&self) -> usize {
        self.pending.iter().map(VecDeque::len).sum()
    }

    fn is_delivered(&self, chain: ChainId, height: u64) -> bool {
        height < self.base[chain as usize]
    }

    fn check_chain(&self, chain: ChainId) -> Result<(), OrderingError> {
        if chain as usize >= self.n {
            return Err(OrderingError::UnknownChain { chain, n: self.n });
        }
        Ok(())
    }

    fn reach_of(&mut self, refs: &[(ChainId, u64)]) -> ChainSet {
        let mut reach = ChainSet::with_capacity(self.n);
        for &(c, h) in refs {
            let base = self.base[c as usize];
            if h < base {
                continue;
            }
            let y = &self.pending[c as usize][(h - base) as usize];
            reach.union_with(&y.reach);
            self.ops += reach.words() as u64;
            if h == base && self.is_candidate[c as usize] {
                reach.insert(c as usize);
            }
        }
        reach
    }

    /// Feeds one causally complete block and returns any batches it unlocks.
    pub fn receive_block(&mut self, block: &Block) -> Result<Vec<DeliveryBatch>, OrderingError> {
        self.check_chain(block.chain)?;
        let refs: Vec<(ChainId, u64)> = block.references().map(|(c, h, _)| (c, h)).collect();
        for &(c, _) in &refs {
            self.check_chain(c)?;
        }
        let q = block.chain as usize;
        if self.known.contains_key(&block.hash) || self.is_delivered(block.chain, block.height) {
            return Ok(Vec::new());
        }
        if block.height != self.base[q] + self.pending[q].len() as u64 {
            return Err(OrderingError::NotCausal(block.hash));
        }
        for &(c, h) in &refs {
            if h >= self.base[c as usize] + self.pending[c as usize].len() as u64 {
                return Err(OrderingError::NotCausal(block.hash));
            }
        }

        let first = self.pending[q].is_empty();
        let reach = self.reach_of(&refs);
        let all_delivered = refs.iter().all(|&(c, h)| self.is_delivered(c, h));
        if first {
            self.ans.insert(q);
        }
        if first && all_delivered {
            self.is_candidate[q] = true;
            self.first_reach[q] = vec![None; self.n];
            self.first_reach[q][q] = Some(block.height);
            self.lowest_reach[q].clear();
            self.lowest_reach[q].insert(q);
            for y in 0..self.n {
                if y != q && self.is_candidate[y] {
                    self.matrix[q * self.n + y] = 1;
                    self.matrix[y * self.n + q] = self.lowest_reach[y].len() as u32;
                    self.ops += 2;
                }
            }
            self.matrix[q * self.n + q] = 0;
        } else {
            let reached: Vec<usize> = reach.iter().collect();
            for &c in &reached {
                if self.first_reach[c][q].is_none() {
                    self.first_reach[c][q] = Some(block.height);
                    if first {
                        self.lowest_reach[c].insert(q);
                    }
                }
            }
            if first {
                for &c in &reached {
                    for y in 0..self.n {
                        if self.is_candidate[y] && !reach.contains(y) {
                            self.matrix[c * self.n + y] += 1;
                            self.ops += 1;
                        }
                    }
                }
            }
        }
        self.known.insert(block.hash, block.chain);
        self.pending[q].push_back(Pending {
            hash: block.hash,
            height: block.height,
            refs,
            arrival: self.arrivals,
            reach,
        });
        self.arrivals += 1;
        Ok(self.deliver_ready())
    }

    fn candidate_chains(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(|&c| self.is_candidate[c])
    }

    fn count(&self, x: usize, y: usize) -> u32 {
        self.matrix[x * self.n + y]
    }

    fn preceding_chains(&mut self) -> Vec<usize> {
        let cands: Vec<usize> = self.candidate_chains().collect();
        self.ops += (cands.len() * cands.len()) as u64;
        let bound = self.phi as i64 - (self.n - self.ans.len()) as i64;
        if bound <= 0 {
            return Vec::new();
        }
        cands
            .iter()
            .copied()
            .filter(|&b| cands.iter().all(|&x| (self.count(x, b) as i64) < bound))
            .collect()
    }

    fn criteria_with(&mut self, preceding: &[usize]) -> Criteria {
        if preceding.is_empty() {
            return Criteria::NoOutput;
        }
        if self.ans.len() == self.n {
            return Criteria::Normal;
        }
        let rest: Vec<usize> = self.candidate_chains().filter(|c| !preceding.contains(c)).collect();
        self.ops += (rest.len() * preceding.len()) as u64;
        let stable = !rest.is_empty()
            && rest
                .iter()
                .all(|&b| preceding.iter().any(|&a| self.count(a, b) as usize > self.phi));
        if stable {
            Criteria::Early
        } else {
            Criteria::NoOutput
        }
    }

    pub fn check_criteria(&mut self) -> Criteria {
        let a = self.preceding_chains();
        self.criteria_with(&a)
    }

    /// Hashes of the preceding set, ascending.
    pub fn preceding_set(&mut self) -> Vec<Digest> {
        let mut out: Vec<Digest> =
            self.preceding_chains().into_iter().map(|c| self.pending[c][0].hash).collect();
        out.sort();
        out
    }

    fn deliver_ready(&mut self) -> Vec<DeliveryBatch> {
        let mut out = Vec::new();
        loop {
            let a = self.preceding_chains();
            let mode = match self.criteria_with(&a) {
                Criteria::NoOutput => break,
                Criteria::Normal => DeliveryMode::Normal,
                Criteria::Early => DeliveryMode::Early,
            };
            out.push(self.deliver(&a, mode));
        }
        out
    }

    fn deliver(&mut self, chains: &[usize], mode: DeliveryMode) -> DeliveryBatch {
        let mut blocks = Vec::with_capacity(chains.len());
        for &c in chains {
            let p = self.pending[c].pop_front().expect("delivered chain has a candidate");
            self.known.remove(&p.hash);
            self.base[c] += 1;
            blocks.push(p.hash);
        }
        blocks.sort();
        self.rebuild();
        let batch = DeliveryBatch { index: self.next_index, mode, blocks, config: self.config };
        self.next_index += 1;
        batch
    }

    /// Recomputes candidates, reach sets and the matrix after a delivery.
    fn rebuild(&mut self) {
        let n = self.n;
        self.ans.clear();
        for c in 0..n {
            self.is_candidate[c] = false;
            if let Some(front) = self.pending[c].front() {
                self.ans.insert(c);
                let base = &self.base;
                self.is_candidate[c] = front.refs.iter().all(|&(rc, h)| h < base[rc as usize]);
            }
        }
        for c in 0..n {
            self.first_reach[c].iter_mut().for_each(|e| *e = None);
            self.lowest_reach[c].clear();
            if self.is_candidate[c] {
                self.first_reach[c][c] = Some(self.base[c]);
                self.lowest_reach[c].insert(c);
            }
        }
        let mut order: Vec<(u64, usize, usize)> = Vec::with_capacity(self.pending_len());
        for (c, run) in self.pending.iter().enumerate() {
            for (i, p) in run.iter().enumerate() {
                order.push((p.arrival, c, i));
            }
        }
        order.sort_unstable();
        for (_, c, i) in order {
            let refs = std::mem::take(&mut self.pending[c][i].refs);
            let reach = self.reach_of(&refs);
            let height = self.pending[c][i].height;
            let lowest = i == 0;
            for r in reach.iter() {
                if self.first_reach[r][c].is_none() {
                    self.first_reach[r][c] = Some(height);
                    if lowest {
                        self.lowest_reach[r].insert(c);
                    }
                }
            }
            let p = &mut self.pending[c][i];
            p.refs = refs;
            p.reach = reach;
        }
        for x in 0..n {
            if !self.is_candidate[x] {
                continue;
            }
            for y in 0..n {
                if self.is_candidate[y] {
                    self.matrix[x * n + y] =
                        self.lowest_reach[x].difference_len(&self.lowest_reach[y]) as u32;
                    self.ops += self.lowest_reach[x].words() as u64;
                }
            }
        }
    }

    /// Emits every pending block in topological waves, each wave being the
    /// current candidates in hash order.
    pub fn flush(&mut self) -> Vec<DeliveryBatch> {
        let mut out = Vec::new();
        while self.pending_len() > 0 {
            let wave: Vec<usize> = self.candidate_chains().collect();
            assert!(!wave.is_empty(), "pending blocks without a candidate");
            out.push(self.deliver(&wave, DeliveryMode::Flush));
        }
        out
    }

    fn candidate_chain_of(&self, hash: &Digest) -> Result<usize, OrderingError> {
        match self.known.get(hash) {
            Some(&c) if self.is_candidate[c as usize] && self.pending[c as usize][0].hash == *hash => {
                Ok(c as usize)
            }
            _ => Err(OrderingError::NotCandidate(*hash)),
        }
    }

    pub fn candidates(&self) -> Vec<Digest> {
        self.candidate_chains().map(|c| self.pending[c][0].hash).collect()
    }

    pub fn global_ans(&self) -> Vec<ChainId> {
        self.ans.iter().map(|c| c as ChainId).collect()
    }

    /// Lowest pending height per chain.
    pub fn gahv(&self) -> Vec<Option<u64>> {
        (0..self.n)
            .map(|c| (!self.pending[c].is_empty()).then_some(self.base[c]))
            .collect()
    }

    /// Lowest height of each chain acking the candidate, if any.
    pub fn ahv_prime(&self, hash: &Digest) -> Result<Vec<Option<u64>>, OrderingError> {
        Ok(self.first_reach[self.candidate_chain_of(hash)?].clone())
    }

    pub fn ans_of(&self, hash: &Digest) -> Result<Vec<ChainId>, OrderingError> {
        let c = self.candidate_chain_of(hash)?;
        Ok((0..self.n)
            .filter(|&q| self.first_reach[c][q].is_some())
            .map(|q| q as ChainId)
            .collect())
    }

    pub fn ahv_of(&self, hash: &Digest) -> Result<Vec<HeightEntry>, OrderingError> {
        let c = self.candidate_chain_of(hash)?;
        let gahv = self.gahv();
        Ok((0..self.n)
            .map(|q| match gahv[q] {
                None => HeightEntry::Undefined,
                Some(g) if self.first_reach[c][q] == Some(g) => HeightEntry::Height(g),
                Some(_) => HeightEntry::Infinity,
            })
            .collect())
    }

    pub fn ahv_count(&self, hash: &Digest) -> Result<usize, OrderingError> {
        Ok(super::height_count(&self.ahv_of(hash)?))
    }

    /// The count matrix over current candidates, keyed by hash pairs.
    pub fn matrix(&self) -> BTreeMap<(Digest, Digest), u32> {
        let mut out = BTreeMap::new();
        for x in self.candidate_chains() {
            for y in self.candidate_chains() {
                out.insert((self.pending[x][0].hash, self.pending[y][0].hash), self.count(x, y));
            }
        }
        out
    }
}
