use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lattice(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lattice"))
        .args(args)
        .env_remove("LATTICE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn bundled_baseline_passes_and_writes_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("baseline");
    let o = lattice(&["run", "baseline_4x1", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["summary.csv", "heights.csv", "decisions.csv", "scenario.toml", "violations.txt"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("decided_heights,50"));
    assert!(summary.contains("violations,0"));
    assert!(out.join("nodes/node-3/batches.log").exists());
}

#[test]
fn oversized_notary_set_exits_with_scenario_error() {
    let o = lattice(&["run", "notary_too_large", "--out", "/nonexistent/never-written"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exceeds"));
}

#[test]
fn unknown_or_malformed_scenarios_exit_with_scenario_error() {
    assert_eq!(lattice(&["run", "no_such_scenario"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("bad.toml");
    fs::write(&file, "name = \"x\"\nnodes = 4\nchains = 1\nheights = 3\nbogus = 1\n").unwrap();
    assert_eq!(lattice(&["run", path(&file)]).status.code(), Some(2));
}

#[test]
fn partition_heal_decides_within_two_rounds_after_the_heal() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("heal");
    let o = lattice(&["run", "partition_heal", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let heights = fs::read_to_string(out.join("heights.csv")).unwrap();
    let mut bounded = 0;
    for line in heights.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let (max_round, bound, byzantine) = (cols[5], cols[6], cols[9]);
        if let Ok(bound) = bound.parse::<u64>() {
            bounded += 1;
            assert!(max_round.parse::<u64>().unwrap() <= bound, "{line}");
            assert!(bound <= 2 + byzantine.parse::<u64>().unwrap() + 1);
        }
    }
    assert!(bounded > 0);
}

#[test]
fn order_check_accepts_identical_runs_and_pinpoints_corruption() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, arrival) in [(&a, "1"), (&b, "2")] {
        let o = lattice(&["run", "ordering_6x5", "--out", path(dir), "--arrival-seed", arrival]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = lattice(&["order-check", path(&a), path(&b)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let log = b.join("nodes/node-2/batches.log");
    let text = fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let victim = 17;
    let last = lines[victim].pop().unwrap();
    lines[victim].push(if last == '0' { '1' } else { '0' });
    fs::write(&log, lines.join("\n") + "\n").unwrap();
    let o = lattice(&["order-check", path(&a), path(&b)]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("node-2/batches.log") && err.contains(&format!("index {victim}")), "{err}");
}

#[test]
fn sizing_prints_the_table_and_single_queries() {
    let o = lattice(&["sizing"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().count(), 13);
    let row = |n: &str, r: &str, t: &str| {
        text.lines()
            .find(|l| {
                let c: Vec<&str> = l.split_whitespace().collect();
                c.len() > 4 && c[0] == n && c[1] == r && c[2] == t
            })
            .map(|l| l.split_whitespace().skip(3).take(2).collect::<Vec<_>>().join(" "))
    };
    assert_eq!(row("10000", "1/4", "2^-60").as_deref(), Some("1789 1789"));
    assert_eq!(row("100000", "1/5", "2^-60").as_deref(), Some("774 781"));
    assert!(text.contains("MISMATCH"));

    let o = lattice(&["sizing", "--population", "10000", "--byzantine", "2000", "--target-log2", "-40"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("m* = 481"));
}

#[test]
fn replay_rebuilds_the_same_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = lattice(&["run", "chaos_agreement", "--out", path(&out), "--transcript", "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("transcript.jsonl").exists());
    let o = lattice(&["replay", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let a = fs::read_to_string(out.join("heights.csv")).unwrap();
    let b = fs::read_to_string(out.join("replay/heights.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn output_directory_defaults_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lattice"))
        .args(["run", "baseline_4x1", "--seed", "9"])
        .env("LATTICE_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(tmp.path().join("baseline_4x1-9/summary.csv").exists());
}
