use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use trusdn::bench::{self, BenchConfig, BenchMode};
use trusdn::harness::{run_scenario, Scenario, ScenarioError};

#[derive(Parser)]
#[command(name = "trusdn", version, about = "Attested SDN simulator and benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Psk,
    Pk,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file and check its assertions.
    Run {
        scenario: PathBuf,
        /// Overrides the seed stored in the file.
        #[arg(long, env = "TRUSDN_SEED")]
        seed: Option<u64>,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Benchmark first-flow setup and write one CSV row per flow.
    Bench {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        flows: u64,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        repeats: u64,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, env = "TRUSDN_SEED", default_value_t = 0)]
        seed: u64,
        /// Place the two tasks on different hosts.
        #[arg(long)]
        cross_host: bool,
    },
    /// Print min/max/mean/median/stddev for each column of a bench CSV.
    Summary { csv: PathBuf },
}

const EXIT_ASSERTION: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn cmd_run(path: PathBuf, seed: Option<u64>, json: bool) -> ExitCode {
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => return fail(format!("{}: {e}", path.display())),
    };
    let scenario = match Scenario::from_json(&text) {
        Ok(s) => s,
        Err(e) => return fail(format!("{}: {e}", path.display())),
    };
    let seed = seed.unwrap_or(scenario.seed);
    let report = match run_scenario(&scenario, seed) {
        Ok(r) => r,
        Err(e @ ScenarioError::Parse(_)) => return fail(e),
        Err(e) => return fail(format!("{}: {e}", path.display())),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        println!("scenario {} (seed {})", report.name, report.seed);
        for (a, ok) in &report.assertions {
            let name = serde_json::to_value(a).expect("assertion serializes");
            println!("{} {}", if *ok { "PASS" } else { "FAIL" }, name.as_str().unwrap_or("?"));
        }
        println!("transcript digest {}", report.transcript_digest);
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_ASSERTION)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.cmd {
        Cmd::Run { scenario, seed, json } => cmd_run(scenario, seed, json),
        Cmd::Bench {
            flows,
            repeats,
            mode,
            csv,
            seed,
            cross_host,
        } => {
            let mode = match mode {
                Mode::Psk => BenchMode::Psk,
                Mode::Pk => BenchMode::Pk,
            };
            let cfg = BenchConfig {
                cross_host,
                ..BenchConfig::new(flows, repeats, mode, seed)
            };
            let rows = match bench::run_bench(&cfg) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            if let Err(e) = bench::write_csv(&csv, &rows) {
                return fail(e);
            }
            println!("wrote {} rows to {}", rows.len(), csv.display());
            ExitCode::SUCCESS
        }
        Cmd::Summary { csv } => match bench::read_csv(&csv) {
            Ok(rows) => {
                print!("{}", bench::render_summary(&bench::summarize(&rows)));
                ExitCode::SUCCESS
            }
            Err(e) => fail(format!("{}: {e}", csv.display())),
        },
    }
}
