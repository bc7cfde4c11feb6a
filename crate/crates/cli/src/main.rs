//! `rln-sim`: run relay scenarios, emit conformance vectors, benchmark the
//! primitives and pretty-print results.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 invariant violation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rln_relay::bench::{run_bench, BenchReport, BENCH_SCHEMA};
use rln_relay::simnet::{self, MetricsReport, Scenario};
use rln_relay::vectors;
use rln_relay::ModulusChoice;

const EXIT_INPUT: u8 = 1;
const EXIT_INVARIANT: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "rln-sim",
    version,
    about = "Rate-limited gossip relay simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file, or the name of a bundled scenario.
    #[arg(long, global = true, value_name = "PATH")]
    scenario: Option<String>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override the scenario (or bench) seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Field modulus: default, p61 or p97.
    #[arg(long, global = true, value_name = "MODULUS")]
    modulus: Option<ModulusChoice>,

    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write metrics.json, verdicts.jsonl and ledger.jsonl.
    Run,
    /// Write conformance vectors and check them.
    Vectors,
    /// Time the core operations and print JSON.
    Bench {
        #[arg(long, default_value_t = 100)]
        iterations: usize,
    },
    /// Pretty-print a run directory, metrics.json, bench JSON or vector set.
    Inspect {
        /// Path to inspect. Falls back to --out.
        path: Option<PathBuf>,
    },
    /// List the bundled scenarios.
    Scenarios,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Invariant(String),
}

type CmdResult = Result<(), Failure>;

fn input<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Input(format!("{context}: {e}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run => cmd_run(&cli),
        Command::Vectors => cmd_vectors(&cli),
        Command::Bench { iterations } => cmd_bench(&cli, *iterations),
        Command::Inspect { path } => cmd_inspect(&cli, path.as_deref()),
        Command::Scenarios => {
            for name in simnet::BUNDLED_SCENARIOS {
                println!("{name}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::Invariant(msg)) => {
            eprintln!("invariant violation: {msg}");
            ExitCode::from(EXIT_INVARIANT)
        }
    }
}

fn load_scenario(source: &str) -> Result<Scenario, Failure> {
    let path = Path::new(source);
    if path.exists() {
        let text = fs::read_to_string(path).map_err(input(source))?;
        return Scenario::from_json(&text).map_err(input(source));
    }
    simnet::bundled(source).ok_or_else(|| {
        Failure::Input(format!(
            "{source}: no such file and no bundled scenario by that name"
        ))
    })
}

fn cmd_run(cli: &Cli) -> CmdResult {
    let source = cli
        .scenario
        .as_deref()
        .ok_or_else(|| Failure::Input("run needs --scenario".into()))?;
    let mut scenario = load_scenario(source)?;
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    if let Some(m) = cli.modulus {
        scenario.modulus = m;
    }
    scenario.validate().map_err(input(source))?;
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("rln-out").join(&scenario.name));

    let output = simnet::run(&scenario).map_err(input(source))?;
    output
        .write_to(&out_dir)
        .map_err(input(&out_dir.display().to_string()))?;
    if !cli.quiet {
        print_metrics(&output.metrics);
        println!("wrote {}", out_dir.display());
    }
    let violations = &output.metrics.invariant_violations;
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(violations.join("; ")))
    }
}

fn cmd_vectors(cli: &Cli) -> CmdResult {
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("vectors"));
    let set = vectors::generate(cli.modulus.unwrap_or_default());
    set.write_to(&out_dir)
        .map_err(input(&out_dir.display().to_string()))?;
    let counts = vectors::verify_dir(&out_dir).map_err(|e| Failure::Invariant(e.to_string()))?;
    if !cli.quiet {
        for (file, n) in &counts {
            println!("{file:<16} {n:>4} vectors ok");
        }
        println!("wrote {}", out_dir.display());
    }
    Ok(())
}

fn cmd_bench(cli: &Cli, iterations: usize) -> CmdResult {
    let report = run_bench(
        cli.modulus.unwrap_or_default(),
        iterations,
        cli.seed.unwrap_or(1),
    );
    let json = serde_json::to_string_pretty(&report).expect("bench report serializes");
    match &cli.out {
        Some(dir) => {
            let ctx = dir.display().to_string();
            fs::create_dir_all(dir).map_err(input(&ctx))?;
            fs::write(dir.join("bench.json"), json + "\n").map_err(input(&ctx))?;
            if !cli.quiet {
                print_bench(&report);
            }
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_inspect(cli: &Cli, path: Option<&Path>) -> CmdResult {
    let path = path
        .or(cli.out.as_deref())
        .ok_or_else(|| Failure::Input("inspect needs a path".into()))?;
    let ctx = path.display().to_string();
    if path.is_dir() {
        if path.join(vectors::MANIFEST).exists() {
            let counts =
                vectors::verify_dir(path).map_err(|e| Failure::Invariant(e.to_string()))?;
            for (file, n) in &counts {
                println!("{file:<16} {n:>4} vectors ok");
            }
            return Ok(());
        }
        for name in ["metrics.json", "bench.json"] {
            if path.join(name).exists() {
                return cmd_inspect(cli, Some(&path.join(name)));
            }
        }
        return Err(Failure::Input(format!("{ctx}: nothing to inspect")));
    }
    let text = fs::read_to_string(path).map_err(input(&ctx))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(input(&ctx))?;
    if value.get("schema").and_then(|s| s.as_str()) == Some(BENCH_SCHEMA) {
        let report: BenchReport = serde_json::from_value(value).map_err(input(&ctx))?;
        print_bench(&report);
    } else {
        let metrics: MetricsReport = serde_json::from_value(value).map_err(input(&ctx))?;
        print_metrics(&metrics);
    }
    Ok(())
}

fn print_metrics(m: &MetricsReport) {
    println!(
        "scenario {} (seed {}, {} nodes, {} epochs, modulus {})",
        m.scenario,
        m.seed,
        m.node_count,
        m.epochs,
        m.modulus.as_str()
    );
    println!(
        "  published {}  forged {}  validations {}  proof checks {}  suppressed {}",
        m.messages_published,
        m.forged_publishes,
        m.validations,
        m.proof_verifications,
        m.suppressed_duplicates
    );
    let verdicts: Vec<String> = m
        .verdicts
        .iter()
        .filter(|(_, n)| **n > 0)
        .map(|(k, n)| format!("{k}={n}"))
        .collect();
    println!("  verdicts {}", verdicts.join(" "));
    for ev in &m.spam_events {
        match (ev.detected_by, ev.time_to_detection) {
            (Some(by), Some(dt)) => println!(
                "  spam by {} in epoch {}: {} messages, detected by {} after {}",
                ev.offender, ev.epoch, ev.messages, by, dt
            ),
            _ => println!(
                "  spam by {} in epoch {}: {} messages, not detected",
                ev.offender, ev.epoch, ev.messages
            ),
        }
    }
    for s in &m.slashes {
        println!(
            "  slash at t={}: {} slashed by {}, payout {}",
            s.time, s.offender, s.detector, s.payout
        );
    }
    println!(
        "  slashes {}  total payout {}  ledger balanced {}",
        m.slashes.len(),
        m.total_payout,
        m.ledger_balanced
    );
    for v in &m.invariant_violations {
        println!("  VIOLATION: {v}");
    }
}

fn print_bench(report: &BenchReport) {
    println!(
        "bench ({}, modulus {}, depth {})",
        report.schema,
        report.modulus.as_str(),
        report.tree_depth
    );
    for op in &report.operations {
        println!(
            "  {:<16} median {:>10} ns  ({} iterations)",
            op.name, op.median_ns, op.iterations
        );
    }
}
