//! `xchain`: run scenarios, check them, print metrics, sweep seeds.
//!
//! Exit codes: 0 ok, 1 property violation (or a fatal run error), 2 config
//! error, 3 serializability budget exceeded.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use rayon::prelude::*;

use xchain::verify::{
    check_all_or_nothing, check_secure_transfer, check_strict_serializability, extract_metrics, Verdict,
    VerifyError, DEFAULT_BUDGET,
};
use xchain::{LockOrder, RunOptions, RunOutput, Scenario};

const EXIT_VIOLATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BUDGET: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "xchain", version, about = "Cross-chain atomic transaction simulator and checkers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write its trace.
    Run(Common),
    /// Run a scenario and all three checkers.
    Check(Common),
    /// Print per-chain message and operation counts.
    Metrics(Common),
    /// Run many seeds and aggregate checker pass rates and count stability.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 100)]
        seeds: u64,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the trace (stdout if absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Maximum number of state-changing events for the serializability search.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    #[arg(long, value_parser = parse_lock_order)]
    lock_order: Option<LockOrder>,
    #[arg(short, action = ArgAction::Count)]
    verbose: u8,
}

fn parse_lock_order(s: &str) -> Result<LockOrder, String> {
    s.parse()
}

impl Common {
    fn load(&self) -> Result<Scenario, ExitCode> {
        Scenario::resolve(&self.scenario).map_err(|e| {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        })
    }

    fn options(&self, seed: u64) -> RunOptions {
        RunOptions {
            seed: Some(seed),
            lock_order: self.lock_order,
            ..RunOptions::default()
        }
    }

    fn execute(&self, scenario: &Scenario, seed: u64) -> Result<RunOutput, ExitCode> {
        let sim = scenario.build(&self.options(seed)).map_err(|e| {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        })?;
        Ok(sim.run())
    }

    fn write_trace(&self, out: &RunOutput) -> Result<(), ExitCode> {
        let text = out.trace.render();
        match &self.out {
            Some(p) => fs::write(p, text).map_err(|e| {
                eprintln!("error: cannot write {}: {e}", p.display());
                ExitCode::from(EXIT_CONFIG)
            }),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn outcome_summary(out: &RunOutput) -> Vec<String> {
    let mut lines: Vec<String> = xchain::verify::outcomes(&out.trace)
        .into_iter()
        .map(|(_, tx, o, rounds)| format!("{tx}: {o} (rounds={rounds})"))
        .collect();
    for t in &out.transactions {
        if out.outcome(&t.tx_id).is_none() {
            lines.push(format!("{}: no outcome", t.tx_id));
        }
    }
    if let Some(e) = &out.error {
        lines.push(format!("fatal: {e}"));
    }
    lines
}

enum CheckFailure {
    Violation(String),
    Budget(String),
}

/// Runs all three checkers; returns the verdicts, or why checking stopped.
fn check_all(out: &RunOutput, budget: usize) -> Result<Vec<Verdict>, CheckFailure> {
    if let Some(e) = &out.error {
        return Err(CheckFailure::Violation(format!("fatal run error: {e}")));
    }
    let st = check_secure_transfer(&out.trace);
    let aon = check_all_or_nothing(&out.trace, &out.transactions, &out.initial)
        .map_err(|e| CheckFailure::Violation(e.to_string()))?;
    let ser = check_strict_serializability(&out.trace, &out.initial, budget).map_err(|e| match e {
        VerifyError::BudgetExceeded { .. } => CheckFailure::Budget(e.to_string()),
        other => CheckFailure::Violation(other.to_string()),
    })?;
    Ok(vec![st, aon, ser])
}

fn cmd_run(c: &Common) -> Result<(), ExitCode> {
    let scenario = c.load()?;
    let out = c.execute(&scenario, c.seed)?;
    c.write_trace(&out)?;
    for line in outcome_summary(&out) {
        if c.out.is_some() {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    }
    if out.error.is_some() {
        return Err(ExitCode::from(EXIT_VIOLATION));
    }
    Ok(())
}

fn cmd_check(c: &Common) -> Result<(), ExitCode> {
    let scenario = c.load()?;
    let out = c.execute(&scenario, c.seed)?;
    if c.out.is_some() {
        c.write_trace(&out)?;
    }
    for line in outcome_summary(&out) {
        println!("{line}");
    }
    let verdicts = match check_all(&out, c.budget) {
        Ok(v) => v,
        Err(CheckFailure::Violation(msg)) => {
            println!("violation: {msg}");
            return Err(ExitCode::from(EXIT_VIOLATION));
        }
        Err(CheckFailure::Budget(msg)) => {
            println!("BudgetExceeded: {msg}");
            return Err(ExitCode::from(EXIT_BUDGET));
        }
    };
    for v in &verdicts {
        if c.verbose > 0 {
            print!("{v}");
        } else {
            println!("{}", v.summary());
        }
    }
    if c.verbose > 1 {
        print!("{}", out.trace.render());
    }
    match verdicts.iter().find(|v| !v.pass()) {
        Some(v) => {
            let first = &v.violations[0];
            println!("first violation: {} {}", first.property, first.explanation);
            Err(ExitCode::from(EXIT_VIOLATION))
        }
        None => Ok(()),
    }
}

fn cmd_metrics(c: &Common) -> Result<(), ExitCode> {
    let scenario = c.load()?;
    let out = c.execute(&scenario, c.seed)?;
    if c.out.is_some() {
        c.write_trace(&out)?;
    }
    let m = extract_metrics(&out.trace);
    print!("{}", m.table());
    if c.verbose > 0 {
        print!("{m}");
    }
    if out.error.is_some() {
        for line in outcome_summary(&out) {
            eprintln!("{line}");
        }
        return Err(ExitCode::from(EXIT_VIOLATION));
    }
    Ok(())
}

struct SeedResult {
    seed: u64,
    passed: bool,
    budget: bool,
    first_failure: Option<String>,
    counts: BTreeMap<String, (usize, usize)>,
}

fn cmd_sweep(c: &Common, seeds: u64) -> Result<(), ExitCode> {
    let scenario = c.load()?;
    // Surface config errors once, before fanning out.
    scenario.build(&c.options(c.seed)).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_CONFIG)
    })?;
    let results: Vec<SeedResult> = (c.seed..c.seed + seeds)
        .into_par_iter()
        .map(|seed| {
            let out = scenario.build(&c.options(seed)).expect("validated").run();
            let counts = extract_metrics(&out.trace)
                .per_chain
                .into_iter()
                .map(|(k, m)| (k.to_string(), (m.xc_msgs, m.tx_count)))
                .collect();
            let (passed, budget, first_failure) = match check_all(&out, c.budget) {
                Ok(vs) => match vs.iter().find(|v| !v.pass()) {
                    None => (true, false, None),
                    Some(v) => (false, false, Some(v.summary())),
                },
                Err(CheckFailure::Violation(m)) => (false, false, Some(m)),
                Err(CheckFailure::Budget(m)) => (false, true, Some(m)),
            };
            SeedResult {
                seed,
                passed,
                budget,
                first_failure,
                counts,
            }
        })
        .collect();
    let passed = results.iter().filter(|r| r.passed).count();
    let stable = results.windows(2).all(|w| w[0].counts == w[1].counts);
    println!(
        "{passed}/{} checks passed; counts {}",
        results.len(),
        if stable { "stable" } else { "unstable" }
    );
    if let Some(r) = results.first() {
        for (chain, (x, t)) in &r.counts {
            println!("  {chain}: xc_msgs={x} tx_count={t}");
        }
    }
    for r in results.iter().filter(|r| !r.passed).take(if c.verbose > 0 { usize::MAX } else { 3 }) {
        println!("  seed {}: {}", r.seed, r.first_failure.as_deref().unwrap_or("?"));
    }
    if results.iter().any(|r| r.budget) {
        return Err(ExitCode::from(EXIT_BUDGET));
    }
    if passed != results.len() {
        return Err(ExitCode::from(EXIT_VIOLATION));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Check(c) => cmd_check(c),
        Command::Metrics(c) => cmd_metrics(c),
        Command::Sweep { common, seeds } => cmd_sweep(common, *seeds),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
