//! Live bundle node: receives over TCP, verifies, stores and forwards.

use std::collections::BTreeMap;
use std::fs;
use std::net::TcpListener;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use dtn_core::agent::NodeConfigFile;
use dtn_core::harness::live::{payload_file_name, DeliverFn, LiveNode};
use log::{info, warn};

#[derive(Parser)]
#[command(name = "bp-node", version, about = "Run a live bundle node")]
struct Cli {
    /// Node configuration (JSON). Its `peers` map gives neighbour addresses.
    #[arg(long)]
    config: PathBuf,
    /// Address to accept bundles on.
    #[arg(long)]
    listen: String,
    /// Write payloads of bundles addressed to this node here.
    #[arg(long)]
    deliver_dir: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let text = fs::read_to_string(&cli.config)
        .with_context(|| format!("reading {}", cli.config.display()))?;
    let file: NodeConfigFile = NodeConfigFile::parse(&text)
        .with_context(|| format!("parsing {}", cli.config.display()))?;
    let peers: BTreeMap<String, String> = file.peers.clone();
    let config = file.into_config("").context("invalid node configuration")?;

    if let Some(dir) = &cli.deliver_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let deliver_dir = cli.deliver_dir.clone();
    let deliver: DeliverFn = Box::new(move |bundle, verdict| {
        info!(
            "delivered {} ({} bytes, verdict {verdict:?})",
            bundle.id(),
            bundle.payload.len()
        );
        if let Some(dir) = &deliver_dir {
            let path = dir.join(payload_file_name(&bundle.id()));
            if let Err(e) = fs::write(&path, &bundle.payload) {
                warn!("writing {}: {e}", path.display());
            }
        }
    });

    let listener =
        TcpListener::bind(&cli.listen).with_context(|| format!("binding {}", cli.listen))?;
    let node = LiveNode::spawn(config, peers, listener, deliver)?;
    info!("listening on {}", node.local_addr());
    node.join();
    Ok(())
}
