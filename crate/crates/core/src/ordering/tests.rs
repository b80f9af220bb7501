use std::collections::{BTreeSet, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::lattice::fixture::{self, causal_shuffle, Fixture, Record};
use crate::lattice::Block;

use HeightEntry::{Height as H, Infinity as Inf, Undefined as Bot};

/// Node C's view: chains A..F, F never seen. A0, B0..B2, C0, C1 and D0
/// are already delivered; the rest is pending.
const SIX_CHAIN: &str = "
    A,0,A,0
    B,0,B,0
    B,1,B,1
    B,2,B,2
    C,0,C,0
    C,1,C,1
    D,0,D,0
    # pending
    A,1,A,10
    B,3,B,10
    E,0,E,10
    C,2,C,11,acks=E:0
    D,1,D,11,acks=E:0
    B,4,B,12,acks=C:2
    D,2,D,12,acks=B:3
    A,2,A,13,acks=B:4
";

const SIX_CHAIN_DELIVERED: usize = 7;
const SIX_CHAIN_BASE: [u64; 6] = [1, 3, 2, 1, 0, 0];

fn six_chain() -> Fixture {
    Fixture::parse(SIX_CHAIN).unwrap()
}

fn six_chain_state(phi: usize) -> (Fixture, OrderingState, NaiveOrdering) {
    let f = six_chain();
    let mut inc = OrderingState::with_base(6, phi, SIX_CHAIN_BASE.to_vec(), 0, 0).unwrap();
    let mut naive = NaiveOrdering::new(6, phi).unwrap();
    for b in &f.blocks[..SIX_CHAIN_DELIVERED] {
        naive.mark_delivered(b);
    }
    for b in &f.blocks[SIX_CHAIN_DELIVERED..] {
        assert!(inc.receive_block(b).unwrap().is_empty());
        assert!(naive.receive_block(b).unwrap().is_empty());
    }
    (f, inc, naive)
}

fn set(hashes: &[Digest]) -> BTreeSet<Digest> {
    hashes.iter().copied().collect()
}

#[test]
fn six_chain_fixture_potentials() {
    let (f, mut inc, naive) = six_chain_state(5);
    let h = |c, i| f.hash_of(c, i).unwrap();
    let (a1, b3, e0) = (h(0, 1), h(1, 3), h(4, 0));

    assert_eq!(set(&inc.candidates()), set(&[a1, b3, e0]));
    assert_eq!(inc.ans_of(&a1).unwrap(), vec![0]);
    assert_eq!(inc.ans_of(&b3).unwrap(), vec![0, 1, 3]);
    assert_eq!(inc.ans_of(&e0).unwrap(), vec![0, 1, 2, 3, 4]);
    assert_eq!(inc.global_ans(), vec![0, 1, 2, 3, 4]);
    assert_eq!(inc.gahv(), vec![Some(1), Some(3), Some(2), Some(1), Some(0), None]);

    assert_eq!(inc.ahv_of(&e0).unwrap(), vec![Inf, Inf, H(2), H(1), H(0), Bot]);
    assert_eq!(inc.ahv_of(&a1).unwrap(), vec![H(1), Inf, Inf, Inf, Inf, Bot]);
    assert_eq!(inc.ahv_count(&e0).unwrap(), 3);
    assert_eq!(inc.ahv_count(&a1).unwrap(), 1);

    assert_eq!(set(&inc.preceding_set()), set(&[a1, b3, e0]));
    assert_eq!(inc.check_criteria(), Criteria::NoOutput);

    let snap = naive.snapshot();
    assert_eq!(naive.preceding_of(&snap), set(&[a1, b3, e0]));
    assert_eq!(snap.ans[&b3], BTreeSet::from([0, 1, 3]));
    assert_eq!(snap.ahv[&e0], inc.ahv_of(&e0).unwrap());
    assert_eq!(naive.matrix(&snap), inc.matrix());
    assert!(matches!(inc.ahv_of(&h(2, 2)), Err(OrderingError::NotCandidate(_))));
}

#[test]
fn six_chain_fixture_at_lowest_threshold() {
    let (f, mut inc, naive) = six_chain_state(4);
    let h = |c, i| f.hash_of(c, i).unwrap();
    let (a1, e0) = (h(0, 1), h(4, 0));
    let ahv_a = inc.ahv_of(&a1).unwrap();
    let ahv_e = inc.ahv_of(&e0).unwrap();
    // Counts of 3 against a bound of 4 - 1.
    assert_eq!(less_count(&ahv_e, &ahv_a), 3);
    assert_eq!(grade(&ahv_e, &ahv_a, 4, 6, 5), Grade::Undetermined);
    assert_eq!(inc.preceding_set(), vec![e0]);
    let snap = naive.snapshot();
    assert_eq!(naive.preceding_of(&snap), set(&[e0]));
}

#[test]
fn precede_and_grade_by_hand() {
    let e0 = [Inf, Inf, H(2), H(1), H(0), Bot];
    let a1 = [H(1), Inf, Inf, Inf, Inf, Bot];
    assert_eq!(precede(&e0, &a1, 3), 0);
    assert_eq!(precede(&a1, &e0, 3), 0);
    assert_eq!(grade(&a1, &e0, 3, 6, 5), Grade::Zero);
    assert_eq!(grade(&e0, &a1, 3, 6, 5), Grade::Undetermined);

    let low = [H(0); 4];
    let high = [Inf; 4];
    assert_eq!(precede(&low, &high, 3), 1);
    assert_eq!(precede(&high, &low, 3), -1);
    assert_eq!(grade(&low, &high, 3, 4, 4), Grade::One);
    assert_eq!(grade(&high, &low, 3, 4, 4), Grade::Zero);

    assert!(!Bot.less_than(H(0)));
    assert!(!H(0).less_than(Bot));
    assert!(!Inf.less_than(Inf));
    assert_eq!(height_count(&e0), 3);
}

#[test]
fn threshold_bounds() {
    assert_eq!(default_phi(4), 3);
    assert_eq!(default_phi(6), 4);
    assert_eq!(default_phi(7), 5);
    assert_eq!(default_phi(1), 1);
    assert!(validate_phi(4, 2).is_err());
    assert!(validate_phi(4, 5).is_err());
    assert!(validate_phi(5, 3).is_ok());
    assert!(OrderingState::new(6, 3).is_err());
}

#[test]
fn candidates_equal_to_preceding_set_wait() {
    // Two chains seen out of three, neither beats the other.
    let f = Fixture::parse("0,0,0,0\n1,0,1,0").unwrap();
    let mut s = OrderingState::new(3, 2).unwrap();
    for b in &f.blocks {
        assert!(s.receive_block(b).unwrap().is_empty());
    }
    assert_eq!(s.check_criteria(), Criteria::NoOutput);
}

#[test]
fn single_chain_delivers_in_height_order() {
    let f = Fixture::parse("0,0,0,0\n0,1,0,1\n0,2,0,2\n0,3,0,3").unwrap();
    let mut s = OrderingState::new(1, 1).unwrap();
    let mut got = Vec::new();
    for b in &f.blocks {
        let batches = s.receive_block(b).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].mode, DeliveryMode::Normal);
        got.extend(batches[0].blocks.iter().copied());
    }
    let want: Vec<Digest> = f.blocks.iter().map(|b| b.hash).collect();
    assert_eq!(got, want);
}

/// Seven chains, the last one silent. A0 is acked by the lowest block of
/// chains C..F, so it beats B0 on five chains, more than `phi = 4`.
const EARLY: &str = "
    0,0,0,0
    1,0,1,0
    2,0,2,1,acks=0:0
    3,0,3,1,acks=0:0
    4,0,4,1,acks=0:0
    5,0,5,1,acks=0:0
";

#[test]
fn early_delivery_matches_unsimplified_criteria() {
    let f = Fixture::parse(EARLY).unwrap();
    let (last, rest) = f.blocks.split_last().unwrap();
    let mut naive = NaiveOrdering::new(7, 4).unwrap();
    let mut inc = OrderingState::new(7, 4).unwrap();
    for b in rest {
        naive.insert(b).unwrap();
        assert!(inc.receive_block(b).unwrap().is_empty());
    }
    let before = naive.snapshot();
    let a = naive.preceding_of(&before);
    assert_eq!(naive.criteria_of(&before, &a), Criteria::NoOutput);
    assert_eq!(naive.full_criteria(&before, &a), None);

    naive.insert(last).unwrap();
    let snap = naive.snapshot();
    let a = naive.preceding_of(&snap);
    assert_eq!(a, set(&[f.blocks[0].hash]));
    assert_eq!(naive.criteria_of(&snap, &a), Criteria::Early);
    assert_eq!(naive.full_criteria(&snap, &a), Some(Criteria::Early));

    let batches = inc.receive_block(last).unwrap();
    assert_eq!(batches[0].mode, DeliveryMode::Early);
    assert_eq!(batches[0].blocks, vec![f.blocks[0].hash]);
    assert_eq!(naive.deliver_ready(), batches);
}

fn random_fixture(seed: u64, chains: u32, count: usize, ack_prob: f64) -> Fixture {
    Fixture::from_records(&fixture::random_records(seed, chains, count, ack_prob)).unwrap()
}

/// Feeds both implementations and checks every intermediate structure.
fn compare_step_by_step(n: usize, phi: usize, blocks: &[Block]) -> Vec<DeliveryBatch> {
    let mut inc = OrderingState::new(n, phi).unwrap();
    let mut naive = NaiveOrdering::new(n, phi).unwrap();
    let mut out = Vec::new();
    for b in blocks {
        let x = inc.receive_block(b).unwrap();
        let y = naive.receive_block(b).unwrap();
        assert_eq!(x, y, "batches diverge at {}", b.hash.short());
        out.extend(x);
        let snap = naive.snapshot();
        assert_eq!(set(&inc.candidates()), snap.candidates.iter().copied().collect());
        assert_eq!(inc.global_ans(), snap.global_ans.iter().copied().collect::<Vec<_>>());
        for c in &snap.candidates {
            assert_eq!(inc.ahv_of(c).unwrap(), snap.ahv[c]);
            assert_eq!(inc.ans_of(c).unwrap(), snap.ans[c].iter().copied().collect::<Vec<_>>());
        }
        assert_eq!(inc.matrix(), naive.matrix(&snap));
        assert_eq!(set(&inc.preceding_set()), naive.preceding_of(&snap));
    }
    out
}

#[test]
fn incremental_matches_oracle_on_random_lattices() {
    for seed in 0..12 {
        let chains = 3 + (seed % 5) as u32;
        let ack_prob = [0.2, 0.5, 0.9][seed as usize % 3];
        let f = random_fixture(seed, chains, 120, ack_prob);
        let n = chains as usize;
        for phi in [default_phi(n), n] {
            let batches = compare_step_by_step(n, phi, &f.blocks);
            assert!(!batches.is_empty(), "seed {seed} phi {phi} delivered nothing");
        }
    }
}

#[test]
fn incremental_matches_oracle_in_shuffled_arrival() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 20..26 {
        let f = random_fixture(seed, 5, 100, 0.4);
        let order = causal_shuffle(&f.blocks, &mut rng);
        compare_step_by_step(5, 3, &order);
    }
}

fn flatten(batches: &[DeliveryBatch]) -> Vec<Digest> {
    batches.iter().flat_map(|b| b.blocks.iter().copied()).collect()
}

fn run(n: usize, phi: usize, blocks: &[Block]) -> Vec<DeliveryBatch> {
    let mut s = OrderingState::new(n, phi).unwrap();
    blocks.iter().flat_map(|b| s.receive_block(b).unwrap()).collect()
}

#[test]
fn arrival_order_does_not_change_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for seed in 0..8 {
        let chains = 4 + seed as u32 % 4;
        let n = chains as usize;
        let f = random_fixture(100 + seed, chains, 300, 0.5);
        let reference = run(n, default_phi(n), &f.blocks);
        for _ in 0..6 {
            let order = causal_shuffle(&f.blocks, &mut rng);
            let got = run(n, default_phi(n), &order);
            let common = got.len().min(reference.len());
            assert!(common > 0);
            assert_eq!(got[..common], reference[..common], "seed {seed}");
        }
    }
}

#[test]
fn six_chain_fixture_in_two_orders() {
    let f = six_chain();
    let delivered = &f.blocks[..SIX_CHAIN_DELIVERED];
    let pending = &f.blocks[SIX_CHAIN_DELIVERED..];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let mut s = OrderingState::with_base(6, 4, SIX_CHAIN_BASE.to_vec(), 0, 0).unwrap();
        let mut naive = NaiveOrdering::new(6, 4).unwrap();
        delivered.iter().for_each(|b| naive.mark_delivered(b));
        let order = causal_shuffle_pending(pending, delivered, &mut rng);
        let mut out = Vec::new();
        for b in &order {
            let x = s.receive_block(b).unwrap();
            assert_eq!(x, naive.receive_block(b).unwrap());
            out.extend(x);
        }
        outputs.push(out);
    }
    assert_eq!(outputs[0], outputs[1]);
}

fn causal_shuffle_pending(pending: &[Block], delivered: &[Block], rng: &mut ChaCha8Rng) -> Vec<Block> {
    let mut all = delivered.to_vec();
    all.extend(pending.iter().cloned());
    let skip: HashSet<Digest> = delivered.iter().map(|b| b.hash).collect();
    causal_shuffle(&all, rng).into_iter().filter(|b| !skip.contains(&b.hash)).collect()
}

#[test]
fn every_block_delivered_once_with_trailing_rounds() {
    // Every chain keeps acking every other tip, so the prefix drains.
    let f = random_fixture(7, 6, 600, 1.0);
    let batches = run(6, 4, &f.blocks);
    let out = flatten(&batches);
    let unique: HashSet<Digest> = out.iter().copied().collect();
    assert_eq!(unique.len(), out.len());
    for b in &f.blocks[..400] {
        assert!(unique.contains(&b.hash));
    }
    for (i, batch) in batches.iter().enumerate() {
        assert_eq!(batch.index, i as u64);
        assert!(batch.blocks.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn delivery_respects_references() {
    let f = random_fixture(9, 5, 300, 0.5);
    let batches = run(5, 3, &f.blocks);
    let mut seen = HashSet::new();
    for batch in &batches {
        for h in &batch.blocks {
            let b = f.blocks.iter().find(|b| b.hash == *h).unwrap();
            assert!(b.references().all(|(_, _, r)| seen.contains(&r)));
        }
        seen.extend(batch.blocks.iter().copied());
    }
}

#[test]
fn out_of_order_input_is_rejected() {
    let f = Fixture::parse("0,0,0,0\n0,1,0,1").unwrap();
    let mut s = OrderingState::new(2, 2).unwrap();
    assert_eq!(s.receive_block(&f.blocks[1]), Err(OrderingError::NotCausal(f.blocks[1].hash)));
    assert!(matches!(
        OrderingState::new(1, 1).unwrap().receive_block(&Fixture::parse("3,0,0,0").unwrap().blocks[0]),
        Err(OrderingError::UnknownChain { chain: 3, .. })
    ));
}

#[test]
fn log_lines_round_trip() {
    let batch = DeliveryBatch {
        index: 4,
        mode: DeliveryMode::Early,
        blocks: vec![Digest::from_u64(1), Digest::from_u64(9)],
        config: 0,
    };
    assert_eq!(DeliveryBatch::parse_log_line(&batch.log_line()), Some(batch.clone()));
    assert_eq!(batch_log(&[batch]).lines().count(), 1);
    assert_eq!(DeliveryBatch::parse_log_line("1,sideways,"), None);
}

#[test]
fn flush_is_topological() {
    let f = random_fixture(11, 4, 80, 0.3);
    let batches = flush_topological(&f.blocks, &HashSet::new(), 10);
    assert_eq!(batches[0].index, 10);
    let mut seen = HashSet::new();
    for batch in &batches {
        assert_eq!(batch.mode, DeliveryMode::Flush);
        for h in &batch.blocks {
            let b = f.blocks.iter().find(|b| b.hash == *h).unwrap();
            assert!(b.references().all(|(_, _, r)| seen.contains(&r)));
        }
        seen.extend(batch.blocks.iter().copied());
    }
    assert_eq!(seen.len(), f.blocks.len());

    let mut s = OrderingState::new(4, 3).unwrap();
    f.blocks.iter().for_each(|b| {
        s.receive_block(b).unwrap();
    });
    let rest = s.flush();
    assert_eq!(s.pending_len(), 0);
    assert!(rest.iter().all(|b| b.mode == DeliveryMode::Flush));
}

/// Old configuration of three chains up to time `change`, then four chains.
/// Post-change blocks ack only post-change tips.
fn two_configs(seed: u64, change: u64) -> Vec<Record> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = fixture::random_records(seed, 3, 45, 0.6);
    out.iter_mut().for_each(|r| r.timestamp = r.timestamp.min(change - 1));
    let mut next: Vec<u64> = (0..4).map(|c| out.iter().filter(|r| r.chain == c).count() as u64).collect();
    let mut post = [false; 4];
    for i in 0..60 {
        let c = rng.random_range(0..4u32);
        let acks = (0..4u32)
            .filter(|&o| o != c && post[o as usize] && rng.random_bool(0.6))
            .map(|o| (o, next[o as usize] - 1))
            .collect();
        out.push(Record { chain: c, height: next[c as usize], proposer: crate::NodeId(c as u64), timestamp: change + i, acks });
        next[c as usize] += 1;
        post[c as usize] = true;
    }
    out
}

#[test]
fn configuration_change_flushes_then_restarts() {
    let change = ConfigChange { time: 1000, chains: 4, phi: None };
    let f = Fixture::from_records(&two_configs(3, 1000)).unwrap();
    let old: HashSet<Digest> = f.blocks.iter().filter(|b| b.timestamp < 1000).map(|b| b.hash).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut reference: Option<Vec<DeliveryBatch>> = None;
    for _ in 0..5 {
        let mut o = ConfigOrderer::new(3, 3, Some(change)).unwrap();
        let order = causal_shuffle(&f.blocks, &mut rng);
        let batches: Vec<DeliveryBatch> = order.iter().flat_map(|b| o.receive_block(b).unwrap()).collect();
        assert!(o.switched());
        let out = flatten(&batches);
        let split = out.iter().position(|h| !old.contains(h)).unwrap();
        assert_eq!(split, old.len(), "old blocks all come first");
        assert_eq!(out.iter().collect::<HashSet<_>>().len(), out.len());
        for (i, b) in batches.iter().enumerate() {
            assert_eq!(b.index, i as u64);
            let is_old = b.blocks.iter().all(|h| old.contains(h));
            assert_eq!(b.config, if is_old { 0 } else { 1 });
        }
        match &reference {
            None => reference = Some(batches),
            Some(r) => {
                let common = r.len().min(batches.len());
                assert_eq!(r[..common], batches[..common]);
            }
        }
    }
}

#[test]
fn removed_chains_are_dropped_after_change() {
    let mut records = two_configs(4, 1000);
    // Shrink to two chains. Chain 2 keeps producing and being acked, but
    // its blocks are dropped.
    records.retain(|r| r.timestamp < 1000 || r.chain < 3);
    for r in records.iter_mut().filter(|r| r.timestamp >= 1000) {
        r.acks.retain(|&(c, _)| c < 3);
    }
    assert!(records.iter().any(|r| r.timestamp >= 1000 && r.chain < 2 && r.acks.iter().any(|&(c, _)| c == 2)));
    let f = Fixture::from_records(&records).unwrap();
    let change = ConfigChange { time: 1000, chains: 2, phi: Some(2) };
    let mut o = ConfigOrderer::new(3, 3, Some(change)).unwrap();
    let out: Vec<DeliveryBatch> = f.blocks.iter().flat_map(|b| o.receive_block(b).unwrap()).collect();
    for h in flatten(&out) {
        let b = f.blocks.iter().find(|b| b.hash == h).unwrap();
        assert!(b.timestamp < 1000 || b.chain < 2);
    }
}
