//! End-to-end acceptance suite. Each test prints one verdict line of the
//! form `criterion NN <name>: PASS|FAIL <detail>` before asserting.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lattice_core::analysis::{evaluate_cell, REFERENCE_TABLE};
use lattice_core::chain::{notary_group, verify_notarization};
use lattice_core::crypto::{verify_threshold, Digest};
use lattice_core::lattice::fixture::random_records;
use lattice_core::lattice::{Block, Fixture};
use lattice_core::max_faulty;
use lattice_core::ordering::{default_phi, DeliveryBatch, HeightEntry, NaiveOrdering, OrderingState};
use lattice_core::sim::{
    run, AdversarySpec, Behavior, ConfigChangeSpec, DelayModel, DelaySpec, PartitionSpec, RunReport, Scenario,
    SimError, TransactionSpec,
};

/// Prints one line per criterion. Writes to stdout directly so the line
/// shows up even when the test harness captures output.
fn verdict(n: u32, name: &str, ok: bool, detail: String) {
    let line = format!("criterion {n:>2} {name}: {} {detail}\n", if ok { "PASS" } else { "FAIL" });
    std::io::stdout().write_all(line.as_bytes()).unwrap();
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

/// Runs a scenario, keeping the report of a run that missed its horizon.
fn run_any(sc: Scenario) -> (RunReport, bool) {
    match run(sc) {
        Ok(r) => (r, true),
        Err(SimError::HorizonExceeded { report, .. }) => (*report, false),
        Err(e) => panic!("scenario rejected: {e}"),
    }
}

const BEHAVIORS: [Behavior; 5] =
    [Behavior::Silent, Behavior::EquivocateInit, Behavior::LeaderHog, Behavior::DelayRelease, Behavior::Chaos];

fn random_subset(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<u64> {
    let mut ids: Vec<u64> = (0..n as u64).collect();
    ids.shuffle(rng);
    let mut out = ids[..k].to_vec();
    out.sort_unstable();
    out
}

fn random_partition(rng: &mut ChaCha8Rng, n: usize, lambda_ms: f64) -> PartitionSpec {
    let start = rng.random_range(0.0..6.0) * lambda_ms;
    let len = rng.random_range(4.0..25.0) * lambda_ms;
    let cut = rng.random_range(1..n);
    let mut ids: Vec<u64> = (0..n as u64).collect();
    ids.shuffle(rng);
    PartitionSpec { start_ms: start, end_ms: start + len, groups: vec![ids[..cut].to_vec()] }
}

/// The mixed scenario family behind the agreement sweep.
fn sweep_scenario(i: u64, n: usize, heights: u64, rng: &mut ChaCha8Rng) -> Scenario {
    let spread = max_faulty(n) + 1;
    let t = i as usize % spread;
    let behavior = BEHAVIORS[(i as usize / spread) % BEHAVIORS.len()];
    let chains = if n <= 7 && i % 3 == 0 { 2 } else { 1 };
    let mut sc = Scenario::new("agreement-sweep", n, chains, heights);
    sc.seed = 1_000 + i;
    sc.adversary = AdversarySpec { byzantine: random_subset(rng, n, t), behavior, corrupt_at_ms: None };
    if i % 7 == 3 {
        sc.adversary.corrupt_at_ms = Some(rng.random_range(0.0..800.0));
    }
    if i % 2 == 1 {
        sc.delay = DelaySpec { model: DelayModel::Uniform, min_ms: Some(1.0), max_ms: None, reorder: true };
    }
    if i % 3 == 1 {
        sc.skew_ms = rng.random_range(0.0..=sc.lambda_ms);
    }
    if i % 4 == 2 {
        let p = random_partition(rng, n, sc.lambda_ms);
        sc.partitions.push(p);
    }
    sc
}

#[test]
fn criterion_01_agreement() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa9);
    let plan: [(usize, u64, u64); 4] = [(4, 470, 4), (7, 330, 3), (10, 160, 3), (31, 40, 2)];
    let mut runs = 0;
    let mut decided = 0;
    let mut conflicts = Vec::new();
    let mut other = 0;
    let mut byz_counts = BTreeSet::new();
    for (n, count, heights) in plan {
        for i in 0..count {
            let mut sc = sweep_scenario(i, n, heights, &mut rng);
            if n == 31 && sc.adversary.behavior == Behavior::Chaos {
                sc.adversary.byzantine.truncate(3);
            }
            byz_counts.insert((n, sc.adversary.byzantine.len()));
            let (r, _) = run_any(sc);
            runs += 1;
            decided += r.heights.len();
            for v in &r.violations {
                if v.kind == "agreement" {
                    conflicts.push(format!("n={n} run {i}: {}", v.detail));
                } else {
                    other += 1;
                }
            }
        }
    }
    let t_covered = [4, 7, 10, 31].iter().all(|&n| (0..=max_faulty(n)).all(|t| byz_counts.contains(&(n, t))));
    verdict(
        1,
        "agreement",
        conflicts.is_empty() && runs >= 1_000 && t_covered && other == 0,
        format!(
            "{runs} runs, {decided} decided heights, {} conflicting decisions, {other} other violations, all t covered: {t_covered} {:?}",
            conflicts.len(),
            conflicts.first()
        ),
    );
}

#[test]
fn criterion_02_termination_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e);
    let mut checked = 0;
    let mut healed = 0;
    let mut excess = Vec::new();
    for i in 0..240u64 {
        let n = [4, 7, 10][i as usize % 3];
        let mut sc = Scenario::new("termination", n, 1, 6);
        sc.seed = 5_000 + i;
        let t = (i as usize / 3) % (max_faulty(n) + 1);
        let behavior = BEHAVIORS[(i as usize / 9) % BEHAVIORS.len()];
        sc.adversary = AdversarySpec { byzantine: random_subset(&mut rng, n, t), behavior, corrupt_at_ms: None };
        sc.skew_ms = rng.random_range(0.0..=sc.lambda_ms);
        if i % 2 == 1 {
            sc.delay = DelaySpec { model: DelayModel::Uniform, min_ms: Some(1.0), max_ms: None, reorder: true };
        }
        let partitioned = i % 4 == 0;
        if partitioned {
            let p = random_partition(&mut rng, n, sc.lambda_ms);
            sc.partitions.push(p);
        }
        let (r, _) = run_any(sc);
        for h in &r.heights {
            let Some(bound) = h.bound else { continue };
            checked += 1;
            if partitioned {
                healed += 1;
            }
            if h.max_round > bound {
                excess.push(format!("run {i} n={n} t={} {}/{}: round {} > {bound}", h.byzantine, h.chain, h.height, h.max_round));
            }
        }
    }
    verdict(
        2,
        "termination bound",
        excess.is_empty() && checked > 1_000 && healed > 0,
        format!("{checked} bounded heights ({healed} in partitioned runs), {} over the bound {:?}", excess.len(), excess.first()),
    );
}

#[test]
fn criterion_03_expected_rounds() {
    let mut rounds = Vec::new();
    for seed in 0..10u64 {
        let mut sc = Scenario::new("leader-hog", 10, 1, 1_000);
        sc.seed = 300 + seed;
        sc.adversary = AdversarySpec { byzantine: vec![0, 1, 2], behavior: Behavior::LeaderHog, corrupt_at_ms: None };
        let (r, _) = run_any(sc);
        assert!(r.passed(), "{:?}", r.violations.first());
        rounds.extend(r.heights.iter().map(|h| h.max_round as f64));
    }
    let n = rounds.len() as f64;
    let mean = rounds.iter().sum::<f64>() / n;
    let var = rounds.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let limit = 1.75 + 3.0 * se;
    verdict(
        3,
        "expected rounds",
        rounds.len() >= 10_000 && mean <= limit,
        format!("{} heights, mean {mean:.4} (se {se:.4}) against limit {limit:.4}", rounds.len()),
    );
}

#[test]
fn criterion_04_latency() {
    let mut worst: f64 = 0.0;
    let mut heights = 0;
    let mut ok = true;
    for (n, chains) in [(4, 1), (7, 1), (10, 2)] {
        let sc = Scenario::new("baseline", n, chains, 40);
        let (r, done) = run_any(sc);
        ok &= done && r.passed() && r.heights.iter().all(|h| h.max_round == 1);
        heights += r.heights.len();
        worst = worst.max(r.max_latency());
    }
    verdict(4, "latency", ok && worst <= 6.0, format!("{heights} heights, worst decision {worst:.3} lambda after start"));
}

fn ordering_runs() -> Vec<RunReport> {
    (0..50u64)
        .map(|a| {
            let mut sc = Scenario::new("ordering-permutations", 5, 6, 175);
            sc.seed = 42;
            sc.arrival_seed = Some(a);
            sc.delay.reorder = true;
            let (r, done) = run_any(sc);
            assert!(done && r.passed(), "{:?}", r.violations.first());
            r
        })
        .collect()
}

fn common_prefix<T: PartialEq + Clone>(seqs: &[&[T]]) -> Result<usize, usize> {
    let len = seqs.iter().map(|s| s.len()).min().unwrap_or(0);
    let longest = seqs.iter().max_by_key(|s| s.len()).expect("non-empty");
    for s in seqs {
        if let Some(i) = s.iter().zip(longest.iter()).position(|(a, b)| a != b) {
            return Err(i);
        }
    }
    Ok(len)
}

#[test]
fn criterion_05_06_total_ordering() {
    let runs = ordering_runs();
    let batch_logs: Vec<Vec<String>> = runs
        .iter()
        .flat_map(|r| r.nodes.iter().map(|n| n.batches.iter().map(DeliveryBatch::log_line).collect()))
        .collect();
    let stamps: Vec<Vec<(Digest, u64)>> = runs
        .iter()
        .flat_map(|r| r.nodes.iter().map(|n| n.compaction.iter().map(|c| (c.block, c.consensus_timestamp)).collect()))
        .collect();
    let batches = common_prefix(&batch_logs.iter().map(Vec::as_slice).collect::<Vec<_>>());
    let rows = common_prefix(&stamps.iter().map(Vec::as_slice).collect::<Vec<_>>());
    let ok5 = matches!(rows, Ok(k) if k >= 1_000) && batches.is_ok();
    verdict(
        5,
        "total-ordering agreement",
        ok5,
        format!(
            "{} permutations x {} nodes; identical batch prefix {:?}, identical timestamp prefix {:?}",
            runs.len(),
            runs[0].nodes.len(),
            batches,
            rows
        ),
    );

    // Every settled block below the ordering's tail is output exactly once
    // by every node, and nothing else is.
    let mut missing = 0;
    let mut repeated = 0;
    let mut foreign = 0;
    let mut checked = 0;
    for r in &runs {
        let settled: HashMap<Digest, u64> =
            r.chains.iter().flat_map(|c| c.iter().map(|b| (b.hash, b.height))).collect();
        let tail = r.nodes.iter().flat_map(|n| n.heights.iter()).min().copied().unwrap_or(0).saturating_sub(5);
        for n in &r.nodes {
            let out: Vec<Digest> = n.batches.iter().flat_map(|b| b.blocks.iter().copied()).collect();
            let unique: HashSet<Digest> = out.iter().copied().collect();
            repeated += out.len() - unique.len();
            foreign += unique.iter().filter(|h| !settled.contains_key(h)).count();
            for (h, height) in &settled {
                if *height < tail {
                    checked += 1;
                    if !unique.contains(h) {
                        missing += 1;
                    }
                }
            }
        }
    }
    verdict(
        6,
        "total-ordering validity",
        missing == 0 && repeated == 0 && foreign == 0 && checked > 0,
        format!("{checked} (node, block) pairs checked: {missing} missing, {repeated} repeated, {foreign} unknown"),
    );
}

fn drive_both(n: usize, phi: usize, blocks: &[Block]) -> (bool, u64) {
    let mut inc = OrderingState::new(n, phi).unwrap();
    let mut naive = NaiveOrdering::new(n, phi).unwrap();
    let mut same = true;
    for b in blocks {
        same &= inc.receive_block(b).unwrap() == naive.receive_block(b).unwrap();
    }
    (same, inc.ops())
}

#[test]
fn criterion_07_oracle_equivalence() {
    let mut fixtures = 0;
    let mut diverged = Vec::new();
    for seed in 0..500u64 {
        let chains = 4 + (seed % 13) as u32;
        let ack = [0.3, 0.6, 0.9][seed as usize % 3];
        let count = 8 * chains as usize;
        let f = Fixture::from_records(&random_records(seed, chains, count, ack)).unwrap();
        let n = chains as usize;
        let phi = if seed % 2 == 0 { default_phi(n) } else { n };
        fixtures += 1;
        if !drive_both(n, phi, &f.blocks).0 {
            diverged.push(seed);
        }
    }
    // Work per block at n and 2n chains, same blocks per chain.
    let per_block = |n: u32| {
        let mut total = 0.0;
        for seed in 0..5 {
            let f = Fixture::from_records(&random_records(9_000 + seed, n, 40 * n as usize, 0.7)).unwrap();
            let mut s = OrderingState::new(n as usize, default_phi(n as usize)).unwrap();
            for b in &f.blocks {
                s.receive_block(b).unwrap();
            }
            total += s.ops() as f64 / f.blocks.len() as f64;
        }
        total / 5.0
    };
    let ratios: Vec<(u32, f64)> = [4u32, 8].iter().map(|&n| (n, per_block(2 * n) / per_block(n))).collect();
    let quadratic = ratios.iter().all(|(_, r)| *r <= 20.0);
    verdict(
        7,
        "oracle equivalence",
        diverged.is_empty() && quadratic,
        format!("{fixtures} fixtures, {} diverged {:?}; per-block work ratio n->2n {ratios:.2?} (limit 20)", diverged.len(), diverged.first()),
    );
}

const SIX_CHAIN: &str = "
    A,0,A,0
    B,0,B,0
    B,1,B,1
    B,2,B,2
    C,0,C,0
    C,1,C,1
    D,0,D,0
    A,1,A,10
    B,3,B,10
    E,0,E,10
    C,2,C,11,acks=E:0
    D,1,D,11,acks=E:0
    B,4,B,12,acks=C:2
    D,2,D,12,acks=B:3
    A,2,A,13,acks=B:4
";

#[test]
fn criterion_08_ordering_fixture() {
    use HeightEntry::{Height as H, Infinity as Inf, Undefined as Bot};
    let f = Fixture::parse(SIX_CHAIN).unwrap();
    let mut s = OrderingState::with_base(6, 5, vec![1, 3, 2, 1, 0, 0], 0, 0).unwrap();
    for b in &f.blocks[7..] {
        assert!(s.receive_block(b).unwrap().is_empty());
    }
    let h = |c, i| f.hash_of(c, i).unwrap();
    let (a1, b3, e0) = (h(0, 1), h(1, 3), h(4, 0));
    let set = |v: Vec<Digest>| v.into_iter().collect::<BTreeSet<_>>();
    let expected = set(vec![a1, b3, e0]);
    let checks = [
        ("candidates", set(s.candidates()) == expected),
        ("preceding set", set(s.preceding_set()) == expected),
        ("AHV(A1)", s.ahv_of(&a1).unwrap() == vec![H(1), Inf, Inf, Inf, Inf, Bot]),
        ("AHV(B3)", s.ahv_of(&b3).unwrap() == vec![Inf, H(3), Inf, Inf, Inf, Bot]),
        ("AHV(E0)", s.ahv_of(&e0).unwrap() == vec![Inf, Inf, H(2), H(1), H(0), Bot]),
        ("#AHV", [s.ahv_count(&a1), s.ahv_count(&b3), s.ahv_count(&e0)].map(Result::unwrap) == [1, 1, 3]),
        ("ANS(A1)", s.ans_of(&a1).unwrap() == vec![0]),
        ("ANS(B3)", s.ans_of(&b3).unwrap() == vec![0, 1, 3]),
        ("ANS(E0)", s.ans_of(&e0).unwrap() == vec![0, 1, 2, 3, 4]),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(8, "ordering fixture", failed.is_empty(), format!("{} values checked, mismatched: {failed:?}", checks.len()));
}

#[test]
fn criterion_09_sizing_table() {
    let mut mismatches = Vec::new();
    for cell in REFERENCE_TABLE {
        let r = evaluate_cell(cell).unwrap();
        println!("  {r}");
        if !r.matches() {
            println!("    {}", r.diagnosis());
            mismatches.push(format!("{}->{}", cell.quoted, r.computed));
        }
    }
    verdict(9, "sizing table", mismatches.is_empty(), format!("12 cells, mismatched {mismatches:?}"));
}

#[test]
fn criterion_10_chain_integrity() {
    let mut blocks = 0;
    let mut verified = 0;
    let mut runs = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut sample = None;
    for i in 0..30u64 {
        let n = [4, 7][i as usize % 2];
        let mut sc = sweep_scenario(i, n, 12, &mut rng);
        sc.chains = 2;
        sc.transactions = Some(TransactionSpec { count: 200, start_ms: 0.0, interval_ms: 5.0 });
        let (r, _) = run_any(sc);
        runs += 1;
        blocks += r.notarized_blocks;
        verified += r.notarizations_verified;
        if sample.is_none() && r.scenario.adversary.byzantine.is_empty() {
            sample = Some((r, n));
        }
    }
    // Tamper with every byte of a settled block; the notarization carried
    // by its successor must stop verifying.
    let (r, n) = sample.unwrap();
    let chain = &r.chains[0];
    let k = chain.iter().position(|b| !b.payload.transactions.is_empty()).unwrap_or(1).min(chain.len() - 2);
    let block = chain[k].clone();
    let sig = chain[k + 1].parent_notarization.expect("carried by the successor");
    let group = notary_group(r.scenario.seed, block.epoch, 0, n);
    assert!(verify_notarization(&group.public, &block, &sig));
    let bytes = block.encode();
    let mut accepted = 0;
    for i in 0..bytes.len() {
        let mut t = bytes.clone();
        t[i] ^= 0x01;
        accepted += verify_threshold(&group.public, &lattice_core::crypto::hash(&t).0, &sig) as usize;
    }
    let mut field_edits = 0;
    let edits: Vec<Box<dyn Fn(&mut Block)>> = vec![
        Box::new(|b| b.height += 1),
        Box::new(|b| b.timestamp += 1),
        Box::new(|b| b.proposer.0 += 1),
        Box::new(|b| b.epoch += 1),
        Box::new(|b| b.payload.transactions.push(Digest::from_u64(7))),
        Box::new(|b| b.parent = Some(Digest::from_u64(9))),
    ];
    for e in &edits {
        let mut t = block.clone();
        e(&mut t);
        field_edits += verify_notarization(&group.public, &t, &sig) as usize;
    }
    verdict(
        10,
        "chain integrity",
        blocks > 0 && blocks == verified && accepted == 0 && field_edits == 0,
        format!(
            "{runs} runs: {verified}/{blocks} blocks carry a verifying parent notarization; \
             {accepted} of {} single-byte tamperings and {field_edits} of {} field edits still verify",
            bytes.len(),
            edits.len()
        ),
    );
}

#[test]
fn criterion_11_load_balancer() {
    let mut sc = Scenario::new("load-balancer", 4, 4, 40);
    sc.seed = 11;
    sc.transactions = Some(TransactionSpec { count: 10_000, start_ms: 0.0, interval_ms: 0.2 });
    sc.max_transactions = 200;
    let (r, done) = run_any(sc);
    let lb = r.violations.iter().filter(|v| v.kind == "load-balancer").count();
    verdict(
        11,
        "load balancer",
        done && r.packed_transactions == 10_000 && r.duplicate_transactions == 0 && lb == 0,
        format!(
            "{} of 10000 transactions packed, {} twice, {lb} on a foreign chain",
            r.packed_transactions, r.duplicate_transactions
        ),
    );
}

#[test]
fn criterion_12_configuration_change() {
    let mut failures = Vec::new();
    let mut crossed = 0;
    for seed in 0..100u64 {
        let (from, to) = [(2, 4), (4, 2), (3, 5), (5, 3)][seed as usize % 4];
        let mut sc = Scenario::new("config-change", 5, from, 20);
        sc.seed = 12_000 + seed;
        sc.monotone_timestamps = true;
        sc.config_change = Some(ConfigChangeSpec { time_ms: 600.0 + 25.0 * (seed % 20) as f64, chains: to, phi: None });
        if seed % 2 == 1 {
            sc.delay = DelaySpec { model: DelayModel::Uniform, min_ms: Some(1.0), max_ms: None, reorder: true };
        }
        let (r, done) = run_any(sc);
        let logs: Vec<&[lattice_core::sim::CompactionRow]> = r.nodes.iter().map(|n| n.compaction.as_slice()).collect();
        let identical = common_prefix(&logs).is_ok();
        let changed = r.nodes.iter().all(|n| n.batches.iter().any(|b| b.config > 0));
        crossed += changed as usize;
        if !(done && r.passed() && identical && changed && r.timestamp_regressions == 0) {
            failures.push(format!("seed {seed}: done={done} identical={identical} changed={changed} {:?}", r.violations.first()));
        }
    }
    verdict(
        12,
        "configuration change",
        failures.is_empty(),
        format!("100 seeds, {crossed} crossed the boundary on every node, failures {:?}", failures.first()),
    );
}
