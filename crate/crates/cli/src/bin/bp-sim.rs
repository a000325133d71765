//! Scenario runner for the discrete-event bundle simulator.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dtn_core::harness::{self, ReportFormat, Scenario};

#[derive(Parser)]
#[command(name = "bp-sim", version, about = "Run bundle-protocol scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Output {
    /// Report format: text, json or csv.
    #[arg(long, default_value = "text")]
    report: ReportFormat,
    /// Write the event trace (JSON lines) to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Run a built-in scenario, or print it as a scenario file with --emit.
    Preset {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(harness::PRESET_NAMES))]
        name: String,
        #[arg(long)]
        emit: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Time CRC-32 against HMAC-SHA256 over one payload size.
    Bench {
        #[arg(long, default_value_t = 10 * 1024)]
        size: usize,
        #[arg(long, default_value_t = 2000)]
        iterations: u32,
    },
}

fn execute(mut scenario: Scenario, output: &Output) -> Result<bool> {
    if let Some(seed) = output.seed {
        scenario.seed = seed;
    }
    let result = harness::run(&scenario);
    if let Some(path) = &output.trace {
        fs::write(path, result.trace.to_jsonl())
            .with_context(|| format!("writing trace to {}", path.display()))?;
    }
    print!("{}", harness::report(&result, output.report));
    Ok(result.metrics.conservation_holds())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { scenario, output } => harness::load_scenario(&scenario)
            .with_context(|| format!("loading {}", scenario.display()))
            .and_then(|s| execute(s, &output)),
        Command::Preset { name, emit, output } => {
            harness::preset(&name).map_err(Into::into).and_then(|s| {
                if emit {
                    println!("{}", s.to_json());
                    Ok(true)
                } else {
                    execute(s, &output)
                }
            })
        }
        Command::Bench { size, iterations } => {
            let cost = harness::measure_suite_cost(size, iterations);
            println!("payload_bytes {}", cost.payload_bytes);
            println!("iterations {}", cost.iterations);
            println!("crc32_ns_per_op {:.1}", cost.crc32_ns_per_op);
            println!("hmac_sha256_ns_per_op {:.1}", cost.hmac_sha256_ns_per_op);
            println!("hmac_over_crc {:.2}", cost.ratio());
            Ok(true)
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: metrics do not balance");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
