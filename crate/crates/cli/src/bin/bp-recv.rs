//! Final destination: accepts bundles over TCP, checks them and writes payloads.

use std::fs;
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use dtn_core::harness::live::{dtn_now_ms, payload_file_name, receive_frames};
use dtn_core::integrity::{verify, VerificationMode, VerificationPolicy};
use dtn_core::model::{is_expired, ExpiryPolicy, ExpiryStatus};

#[derive(Parser)]
#[command(
    name = "bp-recv",
    version,
    about = "Receive bundles at their destination"
)]
struct Cli {
    /// Address to listen on.
    #[arg(long)]
    node: String,
    /// Number of bundles to wait for.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Directory for accepted payloads.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Verification mode: none, reliability or authenticated.
    #[arg(long, default_value = "reliability")]
    policy: String,
    #[arg(long)]
    key_hex: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether every bundle was accepted.
fn run(cli: Cli) -> Result<bool> {
    let mode = VerificationMode::parse(&cli.policy)
        .with_context(|| format!("--policy {:?}", cli.policy))?;
    let key = cli
        .key_hex
        .as_deref()
        .map(hex::decode)
        .transpose()
        .context("--key-hex")?;
    let policy = VerificationPolicy::new(mode, key).context("--policy")?;
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let listener = TcpListener::bind(&cli.node).with_context(|| format!("binding {}", cli.node))?;
    eprintln!("listening on {}", listener.local_addr()?);

    let mut all_ok = true;
    for frame in receive_frames(&listener, cli.count)? {
        let bundle = match frame {
            Ok(b) => b,
            Err(e) => {
                println!("dropped_decode_error {e}");
                all_ok = false;
                continue;
            }
        };
        let now = u64::try_from(dtn_now_ms() / 1000).unwrap_or(0);
        let status = is_expired(&bundle, now, &ExpiryPolicy::default());
        let verdict = verify(&bundle, &policy);
        let id = bundle.id();
        if status != ExpiryStatus::Live {
            println!("dropped_expired {id} status={status:?}");
            all_ok = false;
        } else if verdict.is_failure() {
            println!("dropped_integrity {id} verdict={verdict:?}");
            all_ok = false;
        } else {
            let written = match &cli.out {
                Some(dir) => {
                    let path = dir.join(payload_file_name(&id));
                    fs::write(&path, &bundle.payload)
                        .with_context(|| format!("writing {}", path.display()))?;
                    path.display().to_string()
                }
                None => "-".to_string(),
            };
            println!(
                "delivered {id} bytes={} verdict={verdict:?} file={written}",
                bundle.payload.len()
            );
        }
    }
    Ok(all_ok)
}
