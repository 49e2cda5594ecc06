//! `mcforensics`: run seeded fleet simulations, anchor days, tamper with a
//! store for testing, verify events and price deployments.
//!
//! Exit codes: 0 success / intact, 1 runtime failure, 2 tampered,
//! 3 incomplete, 4 unknown event / field / chain, 64 usage error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use multichain_forensics::attacks::{run_scenario, ThreatId, ThreatScenario};
use multichain_forensics::costmodel::{cost_report, CostScenario, UnitCostFile, UnitCostTable};
use multichain_forensics::datacenter::{AnchorStatus, LedgerRow, Mutation, StoreError, SyncReport};
use multichain_forensics::sim::{DaySummary, SimError, World, WorldConfig};
use multichain_forensics::time::{Day, Timestamp};
use multichain_forensics::verifier::Verdict;
use multichain_forensics::UnitCosts;

const EXIT_FAILURE: u8 = 1;
const EXIT_NOT_FOUND: u8 = 4;
const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "mcforensics", version, about = "Two-level multi-chain integrity anchoring for IoT forensic events")]
struct Cli {
    /// Store directory (created by `run`, read by every other store command).
    #[arg(long, global = true, env = "FORENSICS_STORE", default_value = "forensics-store")]
    store: PathBuf,

    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a fleet end to end into a fresh store and print per-day sync summaries.
    Run(RunArgs),
    /// Synchronize and anchor one already simulated day (idempotent).
    Sync {
        /// Day to synchronize, as an ISO-8601 date (2020-01-03) or UTC timestamp.
        #[arg(long, value_parser = parse_day)]
        day: Day,
    },
    /// Check a stored event against both chain levels; without an id, check every row.
    ///
    /// Exit code: 0 intact, 2 tampered, 3 incomplete (worst verdict when checking all rows).
    Verify {
        /// Event id, e.g. boat-001-d000-000.
        event_id: Option<String>,
    },
    /// Corrupt one stored field of an event (testing only).
    Tamper {
        event_id: String,
        /// Field to corrupt: payload, digest, path, root or none.
        #[arg(long)]
        field: String,
        /// First-level chain whose path or root is corrupted (default: first available).
        #[arg(long)]
        chain: Option<String>,
    },
    /// Run a scripted threat scenario on a fresh in-memory world.
    ///
    /// Exit code 0 when the scenario's expected outcome holds, 1 otherwise.
    Attack {
        /// Scenario script (JSON file) or a threat id: T1, T2, T3, T4, null.
        scenario: String,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Price the multichain design against single-chain Ethereum alternatives.
    Cost {
        /// Scenario JSON file ({"boats", "events_per_boat_per_day", "days"});
        /// defaults to 1000 boats x 10 events/day x 365 days.
        scenario: Option<PathBuf>,
        /// Unit-cost JSON file with decimal-string prices (default: reference prices).
        #[arg(long)]
        unit_costs: Option<PathBuf>,
    },
    /// Write stored rows (JSONL) or, with --chain, one chain's full state (JSON) to stdout.
    Export {
        /// Only rows of this day (ISO-8601 date or UTC timestamp).
        #[arg(long, value_parser = parse_day)]
        day: Option<Day>,
        /// Export this chain's state instead of rows.
        #[arg(long)]
        chain: Option<String>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// World configuration JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of boats.
    #[arg(long)]
    boats: Option<u32>,
    /// Significant events per boat per day.
    #[arg(long)]
    events: Option<u32>,
    /// Days to simulate (>= 1).
    #[arg(long)]
    days: Option<u32>,
    /// Logical clock origin, an ISO-8601 UTC midnight (default 2020-01-01T00:00:00Z).
    #[arg(long, value_parser = parse_timestamp)]
    origin: Option<Timestamp>,
    /// Leave the final day unsynchronized (its events verify as incomplete).
    #[arg(long)]
    no_sync_last: bool,
}

fn parse_timestamp(s: &str) -> Result<Timestamp, String> {
    Timestamp::parse_iso(s).ok_or_else(|| format!("`{s}` is not an ISO-8601 UTC timestamp"))
}

fn parse_day(s: &str) -> Result<Day, String> {
    Day::parse(s)
        .or_else(|| Timestamp::parse_iso(s).map(Timestamp::day))
        .ok_or_else(|| format!("`{s}` is not an ISO-8601 date or timestamp"))
}

/// A failure with its process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn not_found(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_NOT_FOUND, error: error.into() }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: EXIT_FAILURE, error: e.into() }
    }
}

/// Lookup misses (unknown event, field or chain) get their own exit code.
fn classify(e: SimError) -> Failure {
    match e {
        SimError::Store(e @ (StoreError::NotFound(_) | StoreError::NoSuchField { .. })) => Failure::not_found(e),
        other => other.into(),
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", render_error(&f.error));
            ExitCode::from(f.code)
        }
    }
}

/// Joins the error chain, skipping causes whose text an outer message already
/// embeds.
fn render_error(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn dispatch(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Run(args) => cmd_run(cli, args),
        Command::Sync { day } => cmd_sync(cli, *day),
        Command::Verify { event_id } => cmd_verify(cli, event_id.as_deref()),
        Command::Tamper { event_id, field, chain } => cmd_tamper(cli, event_id, field, chain.as_deref()),
        Command::Attack { scenario, seed } => cmd_attack(cli, scenario, *seed),
        Command::Cost { scenario, unit_costs } => cmd_cost(cli, scenario.as_deref(), unit_costs.as_deref()),
        Command::Export { day, chain } => cmd_export(cli, *day, chain.as_deref()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {what} {}", path.display()))?)
}

fn load_world(cli: &Cli) -> Result<World, Failure> {
    if !cli.store.join(multichain_forensics::sim::RUN_FILE).is_file() {
        return Err(anyhow!("no simulation store at {} (create one with `mcforensics run`)", cli.store.display()).into());
    }
    Ok(World::load(&cli.store).with_context(|| format!("loading store {}", cli.store.display()))?)
}

fn print_json(v: &impl serde::Serialize) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> CmdResult {
    let mut config: WorldConfig = match &args.config {
        Some(p) => read_json(p, "config")?,
        None => WorldConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.boats {
        config.boats = v;
    }
    if let Some(v) = args.events {
        config.events_per_boat_per_day = v;
    }
    if let Some(v) = args.days {
        config.days = v;
    }
    if let Some(v) = args.origin {
        config.origin = v;
    }
    config.validate()?;
    let mut world = World::create_in(config, &cli.store)
        .with_context(|| format!("cannot create store at {}", cli.store.display()))?;
    let summaries = world.run(!args.no_sync_last)?;
    let digest = world.state_digest();
    let counts = world.verdict_counts();
    if cli.json {
        print_json(&serde_json::json!({
            "store": cli.store,
            "config": world.config(),
            "days": summaries,
            "rows": world.store().len(),
            "verdicts": counts.iter().map(|(v, n)| (v.to_string(), n)).collect::<std::collections::BTreeMap<_, _>>(),
            "state_digest": digest,
        }))?;
    } else {
        let c = world.config();
        println!(
            "seed {}  boats {}  events/boat/day {}  days {}  origin {}",
            c.seed, c.boats, c.events_per_boat_per_day, c.days, c.origin
        );
        for s in &summaries {
            print_day(s);
        }
        if args.no_sync_last {
            println!("{}  left unsynchronized", world.day(c.days - 1));
        }
        let verdicts: Vec<String> = counts.iter().map(|(v, n)| format!("{v} {n}")).collect();
        let anchors = world.store().anchors();
        let confirmed = anchors.iter().filter(|a| a.status == AnchorStatus::Confirmed).count();
        println!("rows {}  ({})  anchors {} ({confirmed} confirmed)", world.store().len(), verdicts.join(", "), anchors.len());
        println!("store digest {digest}");
    }
    Ok(0)
}

fn print_day(s: &DaySummary) {
    println!(
        "{}  generated {}  submitted {}  filtered {}  resubmitted {}",
        s.day, s.generated, s.submitted, s.filtered, s.resubmitted
    );
    print_sync(&s.sync);
}

fn print_sync(r: &SyncReport) {
    for (chain, c) in &r.chains {
        let root = c.root.map(|d| d.to_hex()[..16].to_string()).unwrap_or_else(|| "-".into());
        let status = match c.anchor_status {
            Some(s) => serde_json::to_value(s).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
            None => "-".into(),
        };
        println!(
            "  {chain:<10} leaves {:>5}  root {root:<16}  anchor {status:<9}  missing {}  unknown {}",
            c.leaf_count,
            c.missing.len(),
            c.unknown.len()
        );
    }
}

fn cmd_sync(cli: &Cli, day: Day) -> CmdResult {
    let mut world = load_world(cli)?;
    let report = world.sync_day(day)?;
    if cli.json {
        println!("{}", report.to_json());
    } else {
        println!("{}  synchronized", report.day);
        print_sync(&report);
    }
    Ok(0)
}

fn cmd_verify(cli: &Cli, event_id: Option<&str>) -> CmdResult {
    let world = load_world(cli)?;
    let Some(id) = event_id else {
        let all = world.verify_all();
        let worst = [Verdict::Tampered, Verdict::Incomplete]
            .into_iter()
            .find(|v| all.iter().any(|(_, x)| x == v))
            .unwrap_or(Verdict::Intact);
        if cli.json {
            let rows: Vec<_> =
                all.iter().map(|(id, v)| serde_json::json!({"event_id": id, "verdict": v.to_string()})).collect();
            print_json(&serde_json::json!({"verdict": worst.to_string(), "rows": rows}))?;
        } else {
            for (id, v) in all.iter().filter(|(_, v)| *v != Verdict::Intact) {
                println!("{id}  {v}");
            }
            let count = |v| all.iter().filter(|(_, x)| *x == v).count();
            println!(
                "{} rows: {} intact, {} tampered, {} incomplete",
                all.len(),
                count(Verdict::Intact),
                count(Verdict::Tampered),
                count(Verdict::Incomplete)
            );
        }
        return Ok(worst.exit_code() as u8);
    };
    let report = world.verify(id).map_err(classify)?;
    if cli.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.render_table());
    }
    Ok(report.verdict.exit_code() as u8)
}

fn cmd_tamper(cli: &Cli, event_id: &str, field: &str, chain: Option<&str>) -> CmdResult {
    let mutation: Mutation = field.parse().map_err(|e: String| Failure::not_found(anyhow!(e)))?;
    let world = load_world(cli)?;
    let outcome = world.store().tamper_row(event_id, mutation, chain).map_err(|e| classify(e.into()))?;
    if cli.json {
        print_json(&outcome)?;
    } else {
        let on = outcome.chain_id.as_deref().map(|c| format!(" on {c}")).unwrap_or_default();
        println!("tampered {field}{on} of {}: {} -> {}", outcome.event_id, outcome.old, outcome.new);
    }
    Ok(0)
}

fn cmd_attack(cli: &Cli, scenario: &str, seed: Option<u64>) -> CmdResult {
    let mut script = match scenario.parse::<ThreatId>() {
        Ok(id) => ThreatScenario::new(id, 42),
        Err(_) => {
            let path = Path::new(scenario);
            if !path.is_file() {
                return Err(anyhow!("`{scenario}` is neither a threat id (T1..T4, null) nor a scenario file").into());
            }
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ThreatScenario::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
        }
    };
    if let Some(s) = seed {
        script.seed = s;
    }
    let result = run_scenario(&script)?;
    if cli.json {
        println!("{}", result.to_json());
    } else {
        println!("{}", result.traceability);
        println!("seed {}  detection {}  mitigation {}  passed {}", result.seed, result.detection, result.mitigation, result.passed);
        if let Some(c) = &result.divergent_chain {
            println!("divergent chain {c}");
        }
        if let Some(usd) = result.attack_cost_usd {
            println!("attack cost ${usd:.0}");
        }
        for f in &result.findings {
            println!("  - {f}");
        }
        for (k, v) in &result.metrics {
            println!("  {k} = {v}");
        }
    }
    Ok(if result.passed { 0 } else { EXIT_FAILURE })
}

fn cmd_cost(cli: &Cli, scenario: Option<&Path>, unit_costs: Option<&Path>) -> CmdResult {
    let scenario: CostScenario = match scenario {
        Some(p) => read_json(p, "cost scenario")?,
        None => CostScenario::reference(),
    };
    let units: UnitCosts = match unit_costs {
        Some(p) => UnitCostTable::from_file(&read_json::<UnitCostFile>(p, "unit costs")?)?,
        None => UnitCostTable::reference(),
    };
    let report = cost_report(&scenario, &units);
    if cli.json {
        print_json(&report.to_json())?;
    } else {
        print!("{}", report.render_table());
    }
    Ok(0)
}

fn cmd_export(cli: &Cli, day: Option<Day>, chain: Option<&str>) -> CmdResult {
    let world = load_world(cli)?;
    if let Some(c) = chain {
        let handle = world.chain(c).ok_or_else(|| Failure::not_found(anyhow!("unknown chain `{c}`")))?;
        println!("{}", handle.export_json());
        return Ok(0);
    }
    let rows: Vec<LedgerRow> = match day {
        Some(d) => world.store().list_rows(d),
        None => world.store().all_rows(),
    };
    let mut out = std::io::stdout().lock();
    for row in &rows {
        match writeln!(out, "{}", serde_json::to_string(row)?) {
            Ok(()) => {}
            // the reader went away (e.g. piped into `head`)
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => break,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(0)
}
