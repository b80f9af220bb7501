use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lattice_core::analysis::{evaluate_cell, fail_prob, min_notary_size, SizingQuery, REFERENCE_TABLE};
use lattice_core::sim::{compare_report_dirs, read_transcript, replay, run, RunReport, Scenario, SimError};

/// Scenarios shipped with the binary, addressable by name.
const BUNDLED: &[(&str, &str)] = &[
    ("baseline_4x1", include_str!("../scenarios/baseline_4x1.toml")),
    ("chain_integrity", include_str!("../scenarios/chain_integrity.toml")),
    ("chaos_agreement", include_str!("../scenarios/chaos_agreement.toml")),
    ("config_change", include_str!("../scenarios/config_change.toml")),
    ("leader_hog", include_str!("../scenarios/leader_hog.toml")),
    ("load_balancer_4", include_str!("../scenarios/load_balancer_4.toml")),
    ("notary_too_large", include_str!("../scenarios/notary_too_large.toml")),
    ("ordering_6x5", include_str!("../scenarios/ordering_6x5.toml")),
    ("partition_heal", include_str!("../scenarios/partition_heal.toml")),
    ("termination_silent", include_str!("../scenarios/termination_silent.toml")),
];

const PASS: u8 = 0;
const VIOLATION: u8 = 1;
const BAD_INPUT: u8 = 2;

#[derive(Parser)]
#[command(name = "lattice", version, about = "Simulate, check and size a blocklattice deployment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or bundled scenario and write its report.
    ///
    /// Exits 0 when every in-run check passes, 1 on a violation (agreement,
    /// chain integrity, ordering, liveness horizon), 2 when the scenario is
    /// invalid.
    Run {
        /// Path to a scenario TOML file, or the name of a bundled scenario.
        scenario: String,
        /// Report directory. Defaults to `$LATTICE_OUT_DIR/<name>-<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base directory for reports when `--out` is not given.
        #[arg(long, env = "LATTICE_OUT_DIR", default_value = "reports")]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Seed for the order of same-instant deliveries only.
        #[arg(long)]
        arrival_seed: Option<u64>,
        /// Also write `transcript.jsonl`, needed by `replay`.
        #[arg(long)]
        transcript: bool,
    },
    /// Check that batch logs and compaction rows agree across every node of
    /// the given report directories. Exits 1 at the first divergence.
    OrderCheck {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Minimum notary sizes. Without arguments prints the quoted table
    /// next to the computed values.
    Sizing {
        #[arg(long, requires_all = ["byzantine", "target_log2"])]
        population: Option<u64>,
        #[arg(long)]
        byzantine: Option<u64>,
        /// Failure target as a power of two, e.g. -40.
        #[arg(long, allow_hyphen_values = true)]
        target_log2: Option<i32>,
    },
    /// Re-derive a report from the transcript of an earlier run and check
    /// that it matches.
    Replay {
        /// Report directory written with `run --transcript`.
        report: PathBuf,
        /// Where to write the re-derived report. Defaults to `<report>/replay`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List bundled scenarios.
    Scenarios,
}

fn load_scenario(arg: &str) -> Result<Scenario, SimError> {
    let path = Path::new(arg);
    if path.exists() {
        return Scenario::load(path);
    }
    match BUNDLED.iter().find(|(name, _)| *name == arg) {
        Some((_, text)) => Scenario::from_toml(text),
        None => Err(SimError::ScenarioInvalid(format!("no scenario file or bundled scenario named {arg:?}"))),
    }
}

fn print_summary(report: &RunReport, dir: &Path) {
    for (k, v) in report.summary() {
        println!("{k:>28}  {v}");
    }
    println!("{:>28}  {}", "report", dir.display());
}

fn write(report: &RunReport, dir: &Path) -> Result<(), u8> {
    report.write_dir(dir).map_err(|e| {
        eprintln!("cannot write report to {}: {e}", dir.display());
        BAD_INPUT
    })
}

fn cmd_run(
    scenario: &str,
    out: Option<PathBuf>,
    out_dir: PathBuf,
    seed: Option<u64>,
    arrival_seed: Option<u64>,
    transcript: bool,
) -> Result<(), u8> {
    let mut sc = load_scenario(scenario).map_err(|e| {
        eprintln!("{e}");
        BAD_INPUT
    })?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    if arrival_seed.is_some() {
        sc.arrival_seed = arrival_seed;
    }
    sc.transcript |= transcript;
    let dir = out.unwrap_or_else(|| out_dir.join(format!("{}-{}", sc.name, sc.seed)));
    let (report, live) = match run(sc) {
        Ok(r) => (r, true),
        Err(SimError::HorizonExceeded { time, report }) => {
            eprintln!("liveness: horizon reached at {:.3} ms before every node settled the target height", time as f64 / 1e6);
            (*report, false)
        }
        Err(e) => {
            eprintln!("{e}");
            return Err(BAD_INPUT);
        }
    };
    write(&report, &dir)?;
    print_summary(&report, &dir);
    for v in &report.violations {
        eprintln!("{}: {}", v.kind, v.detail);
    }
    if report.passed() && live {
        Ok(())
    } else {
        Err(VIOLATION)
    }
}

fn cmd_order_check(reports: &[PathBuf]) -> Result<(), u8> {
    match compare_report_dirs(reports) {
        Ok(Ok(n)) => {
            println!("{n} logs agree");
            Ok(())
        }
        Ok(Err(d)) => {
            eprintln!("{d}");
            Err(VIOLATION)
        }
        Err(e) => {
            eprintln!("cannot read reports: {e}");
            Err(BAD_INPUT)
        }
    }
}

fn cmd_sizing(population: Option<u64>, byzantine: Option<u64>, target_log2: Option<i32>) -> Result<(), u8> {
    if let (Some(population), Some(byzantine), Some(target_log2)) = (population, byzantine, target_log2) {
        let q = SizingQuery { population, byzantine, target_log2 };
        return match min_notary_size(q) {
            Ok(s) => {
                let p = fail_prob(population, byzantine, s.size).unwrap_or(f64::NAN);
                println!("m* = {}  fail_prob = {p:.6e}  log2 = {:.3}", s.size, s.log2_fail);
                Ok(())
            }
            Err(e) => {
                eprintln!("{e}");
                Err(BAD_INPUT)
            }
        };
    }
    println!("{:>8} {:>6} {:>7} {:>9} {:>9}  verdict", "N", "ratio", "target", "quoted", "computed");
    for cell in REFERENCE_TABLE {
        match evaluate_cell(cell) {
            Ok(r) => println!(
                "{:>8} {:>6} {:>7} {:>9} {:>9}  {}",
                cell.population,
                format!("1/{}", cell.ratio_denominator),
                format!("2^{}", cell.target_log2),
                cell.quoted,
                r.computed,
                if r.matches() { "match".to_string() } else { format!("MISMATCH: {}", r.diagnosis()) }
            ),
            Err(e) => println!("{:>8} 1/{} 2^{}: {e}", cell.population, cell.ratio_denominator, cell.target_log2),
        }
    }
    Ok(())
}

fn cmd_replay(report: &Path, out: Option<PathBuf>) -> Result<(), u8> {
    let bad = |e: String| {
        eprintln!("{e}");
        BAD_INPUT
    };
    let sc = Scenario::load(&report.join("scenario.toml")).map_err(|e| bad(e.to_string()))?;
    let events = read_transcript(&report.join("transcript.jsonl"))
        .map_err(|e| bad(format!("{}: {e}", report.join("transcript.jsonl").display())))?;
    let derived = replay(&sc, &events).map_err(|e| bad(e.to_string()))?;
    let dir = out.unwrap_or_else(|| report.join("replay"));
    write(&derived, &dir)?;
    println!("replayed {} events into {}", events.len(), dir.display());
    cmd_order_check(&[report.to_path_buf(), dir])?;
    if derived.passed() {
        Ok(())
    } else {
        for v in &derived.violations {
            eprintln!("{}: {}", v.kind, v.detail);
        }
        Err(VIOLATION)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { scenario, out, out_dir, seed, arrival_seed, transcript } => {
            cmd_run(&scenario, out, out_dir, seed, arrival_seed, transcript)
        }
        Command::OrderCheck { reports } => cmd_order_check(&reports),
        Command::Sizing { population, byzantine, target_log2 } => cmd_sizing(population, byzantine, target_log2),
        Command::Replay { report, out } => cmd_replay(&report, out),
        Command::Scenarios => {
            for (name, _) in BUNDLED {
                println!("{name}");
            }
            Ok(())
        }
    };
    ExitCode::from(outcome.err().unwrap_or(PASS))
}
