//! Live nodes over TCP.
//!
//! Each connection gets a reader thread that pushes raw frames onto one
//! channel; a single agent thread drains that channel, so the agent sees
//! its inputs strictly one at a time. Neighbours listed in `peers` count as
//! permanently scheduled contacts: the agent thread connects on demand and
//! retries on a timer when a peer is unreachable.

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use log::{debug, info, warn};

use crate::agent::{Agent, Disposition, NodeConfig};
use crate::channel::{ClaError, ConvergenceLayer, TcpLink};
use crate::integrity::Verdict;
use crate::model::{Bundle, BundleId, DTN_EPOCH_UNIX_SECS};
use crate::wire::{self, DecodeError};

const RETRY_INTERVAL: Duration = Duration::from_millis(200);

/// Milliseconds since 2000-01-01T00:00:00 UTC by the system clock.
pub fn dtn_now_ms() -> i64 {
    let unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .expect("system clock after 1970");
    unix.as_millis() as i64 - (DTN_EPOCH_UNIX_SECS as i64) * 1000
}

/// Called for every bundle delivered to this node.
pub type DeliverFn = Box<dyn FnMut(&Bundle, Verdict) + Send>;

pub struct LiveNode {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    worker: Option<JoinHandle<()>>,
}

impl LiveNode {
    pub fn spawn(
        config: NodeConfig,
        peers: BTreeMap<String, String>,
        listener: TcpListener,
        deliver: DeliverFn,
    ) -> io::Result<LiveNode> {
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel::<Vec<u8>>();

        let acceptor = {
            let stop = stop.clone();
            thread::Builder::new()
                .name(format!("{}-accept", config.node_id))
                .spawn(move || {
                    for stream in listener.incoming() {
                        if stop.load(Ordering::SeqCst) {
                            break;
                        }
                        let stream = match stream {
                            Ok(s) => s,
                            Err(e) => {
                                warn!("accept failed: {e}");
                                continue;
                            }
                        };
                        let tx = tx.clone();
                        let peer = stream.peer_addr().ok();
                        thread::spawn(move || {
                            let mut link = TcpLink::from_stream(stream);
                            loop {
                                match link.recv() {
                                    Ok(frame) => {
                                        if tx.send(frame).is_err() {
                                            break;
                                        }
                                    }
                                    Err(ClaError::LinkDown) => break,
                                    Err(e) => {
                                        warn!("connection from {peer:?}: {e}");
                                        break;
                                    }
                                }
                            }
                        });
                    }
                })?
        };

        let worker = {
            let stop = stop.clone();
            let mut state = Worker {
                agent: Agent::new(config.clone(), dtn_now_ms()),
                peers,
                links: HashMap::new(),
                next_tag: 0,
                deliver,
            };
            thread::Builder::new()
                .name(format!("{}-agent", config.node_id))
                .spawn(move || {
                    while !stop.load(Ordering::SeqCst) {
                        match rx.recv_timeout(RETRY_INTERVAL) {
                            Ok(frame) => state.on_frame(&frame),
                            Err(RecvTimeoutError::Timeout) => {}
                            Err(RecvTimeoutError::Disconnected) => break,
                        }
                        state.dispatch();
                    }
                })?
        };

        Ok(LiveNode {
            addr,
            stop,
            acceptor: Some(acceptor),
            worker: Some(worker),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the node stops, which only happens on [`shutdown`](Self::shutdown)
    /// from another handle or a fatal listener error.
    pub fn join(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        if let Some(h) = self.worker.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the acceptor
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        if let Some(h) = self.worker.take() {
            let _ = h.join();
        }
    }
}

struct Worker {
    agent: Agent,
    peers: BTreeMap<String, String>,
    links: HashMap<String, TcpLink>,
    next_tag: u64,
    deliver: DeliverFn,
}

impl Worker {
    fn on_frame(&mut self, frame: &[u8]) {
        let node = self.agent.node_id().to_string();
        let bundle = match wire::decode_bundle(frame) {
            Ok(b) => b,
            Err(e) => {
                warn!("[{node}] dropped_decode_error: {e}");
                return;
            }
        };
        let tag = self.next_tag;
        self.next_tag += 1;
        let receipt = self.agent.receive(tag, &bundle, dtn_now_ms());
        info!(
            "[{node}] {} {} ({} bytes, verdict {:?})",
            receipt.disposition,
            bundle.id(),
            bundle.payload.len(),
            receipt.verdict
        );
        if receipt.disposition == Disposition::Delivered {
            (self.deliver)(&bundle, receipt.verdict.unwrap_or(Verdict::Skipped));
        }
    }

    fn dispatch(&mut self) {
        for hop in self.agent.pending_next_hops() {
            if self.links.contains_key(&hop) {
                continue;
            }
            let Some(addr) = self.peers.get(&hop) else {
                continue;
            };
            match TcpLink::connect(addr.as_str()) {
                Ok(link) => {
                    debug!("connected to {hop} at {addr}");
                    self.links.insert(hop, link);
                }
                Err(e) => debug!("{hop} at {addr} unreachable: {e}"),
            }
        }
        let now = dtn_now_ms();
        let links = &self.links;
        let outcome = self.agent.dispatch(now, |hop| links.contains_key(hop));
        let node = self.agent.node_id().to_string();
        for d in outcome.dropped {
            info!("[{node}] {} {} at dispatch", d.disposition, d.bundle.id());
        }
        for tx in outcome.sent {
            let image = wire::encode_bundle(&tx.bundle);
            let link = self
                .links
                .get_mut(&tx.next_hop)
                .expect("open contact has a link");
            match link.send(&image) {
                Ok(n) => info!(
                    "[{node}] forwarded {} to {} ({n} bytes)",
                    tx.bundle.id(),
                    tx.next_hop
                ),
                Err(e) => {
                    warn!("[{node}] send to {} failed: {e}", tx.next_hop);
                    self.links.remove(&tx.next_hop);
                    if let Err(tx) = self.agent.requeue(tx, now) {
                        warn!(
                            "[{node}] dropped_storage_full {} on requeue",
                            tx.bundle.id()
                        );
                    }
                }
            }
        }
    }
}

/// Sends one bundle to the node listening at `addr`.
pub fn send_bundle(addr: &str, bundle: &Bundle) -> Result<usize, ClaError> {
    let mut link = TcpLink::connect(addr)?;
    let n = link.send(&wire::encode_bundle(bundle))?;
    link.close();
    Ok(n)
}

/// Accepts connections on `listener` until `count` frames have arrived.
pub fn receive_frames(
    listener: &TcpListener,
    count: usize,
) -> Result<Vec<Result<Bundle, DecodeError>>, ClaError> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let (stream, _) = listener.accept()?;
        let mut link = TcpLink::from_stream(stream);
        while out.len() < count {
            match link.recv() {
                Ok(frame) => out.push(wire::decode_bundle(&frame)),
                Err(ClaError::LinkDown) => break,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// File name for a delivered payload, unique per bundle id.
pub fn payload_file_name(id: &BundleId) -> String {
    let source: String = id
        .source
        .as_str()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("{source}-{}-{}.bin", id.creation_ts, id.creation_seq)
}
