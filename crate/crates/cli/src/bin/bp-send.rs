//! Wraps a file in a bundle and hands it to a node over TCP.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Parser;
use dtn_core::harness::live::{dtn_now_ms, send_bundle};
use dtn_core::integrity::{attach_integrity, Coverage, SuiteId};
use dtn_core::model::{Bundle, EndpointId};

#[derive(Parser)]
#[command(name = "bp-send", version, about = "Send a file as a bundle")]
struct Cli {
    /// Destination endpoint, e.g. dtn:c/sink.
    #[arg(long)]
    to: String,
    /// Node to hand the bundle to.
    #[arg(long)]
    node: String,
    /// Lifetime in seconds.
    #[arg(long)]
    lifetime: u64,
    /// Integrity suite: 0 none, 1 CRC-32, 2 HMAC-SHA256.
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=2))]
    suite: u8,
    /// Integrity coverage: payload, primary or both.
    #[arg(long, default_value = "both")]
    coverage: String,
    /// Hex key, required for suite 2.
    #[arg(long)]
    key_hex: Option<String>,
    /// Attach an age block starting at zero.
    #[arg(long)]
    age_block: bool,
    /// Source endpoint.
    #[arg(long, default_value = "dtn:send/app")]
    from: String,
    payload: PathBuf,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let destination = EndpointId::parse(&cli.to).with_context(|| format!("--to {:?}", cli.to))?;
    if destination.is_null() {
        bail!("--to must name a node");
    }
    let source = EndpointId::parse(&cli.from).with_context(|| format!("--from {:?}", cli.from))?;
    if cli.lifetime == 0 {
        bail!("--lifetime must be positive");
    }
    let coverage = match cli.coverage.as_str() {
        "payload" => Coverage::PAYLOAD,
        "primary" => Coverage::PRIMARY,
        "both" => Coverage::BOTH,
        other => bail!("--coverage {other:?}: expected payload, primary or both"),
    };
    let key = cli
        .key_hex
        .as_deref()
        .map(hex::decode)
        .transpose()
        .context("--key-hex")?;
    let payload =
        fs::read(&cli.payload).with_context(|| format!("reading {}", cli.payload.display()))?;

    let now_ms = dtn_now_ms();
    let ts = u64::try_from(now_ms / 1000).context("system clock before 2000")?;
    // distinct ids for sends within the same second
    let seq = (now_ms % 1000) as u64;
    let mut bundle = Bundle::new_unchecked(source, destination, ts, seq, cli.lifetime, payload);
    if cli.age_block {
        bundle.age_ms = Some(0);
    }
    if let Some(suite) = SuiteId::from_code(cli.suite) {
        bundle = attach_integrity(&bundle, suite, coverage, key.as_deref())?;
    }
    let n = send_bundle(&cli.node, &bundle).with_context(|| format!("sending to {}", cli.node))?;
    println!(
        "sent {} ({} payload bytes, {n} bytes on the wire)",
        bundle.id(),
        bundle.payload.len()
    );
    Ok(())
}
