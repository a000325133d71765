//! Per-node bundle agent.
//!
//! An agent sees the world only through its own clock: expiry is judged
//! against [`ClockModel::local_ms`], and bundle residence is measured with a
//! monotonic clock that runs at the node's drift rate. Inputs are handled
//! one at a time; the simulator and the live node both feed agents from a
//! serialized event queue.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrity::{
    self, Coverage, IntegrityError, SuiteId, Verdict, VerificationMode, VerificationPolicy,
};
use crate::model::{
    self, Bundle, EndpointId, ExpiryPolicy, ExpiryStatus, ExtensionBlock, SequenceCounter,
    UtcSeconds,
};
use crate::wire;

/// Drift magnitudes at or above this are rejected.
pub const MAX_DRIFT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("mutation target is absent from the bundle")]
    TargetAbsent,
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Integrity(#[from] IntegrityError),
}

/// A node clock: a fixed offset plus linear drift from true time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClockModel {
    pub offset_s: f64,
    /// Seconds of error gained per second of true time.
    pub drift: f64,
}

impl ClockModel {
    pub const TRUE: ClockModel = ClockModel {
        offset_s: 0.0,
        drift: 0.0,
    };

    pub fn new(offset_s: f64, drift: f64) -> Self {
        ClockModel { offset_s, drift }
    }

    pub fn is_valid(&self) -> bool {
        self.offset_s.is_finite() && self.drift.is_finite() && self.drift.abs() < MAX_DRIFT
    }

    /// Local reading at `true_now`, both in seconds; drift accumulates from
    /// `start`.
    pub fn local_time(&self, start: f64, true_now: f64) -> f64 {
        true_now + self.offset_s + self.drift * (true_now - start)
    }

    /// Millisecond form of [`local_time`](Self::local_time), rounded to the
    /// nearest millisecond.
    pub fn local_ms(&self, start_ms: i64, true_ms: i64) -> i64 {
        let offset = (self.offset_s * 1000.0).round() as i64;
        let drift = (self.drift * (true_ms - start_ms) as f64).round() as i64;
        true_ms + offset + drift
    }

    /// Elapsed time as measured by this node's monotonic clock.
    pub fn measure_elapsed_ms(&self, true_elapsed_ms: u64) -> u64 {
        (true_elapsed_ms as f64 * (1.0 + self.drift))
            .round()
            .max(0.0) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    /// Node part of this node's endpoints.
    pub node_id: String,
    pub clock: ClockModel,
    pub policy: VerificationPolicy,
    pub expiry: ExpiryPolicy,
    /// Destination node -> next-hop node.
    pub routes: BTreeMap<String, String>,
    pub storage_limit: usize,
    pub age_block_default: bool,
}

impl NodeConfig {
    /// A node with a true clock, no verification and no routes.
    pub fn new(node_id: &str) -> Self {
        NodeConfig {
            node_id: node_id.to_string(),
            clock: ClockModel::TRUE,
            policy: VerificationPolicy::none(),
            expiry: ExpiryPolicy::default(),
            routes: BTreeMap::new(),
            storage_limit: 1000,
            age_block_default: false,
        }
    }

    pub fn route(mut self, destination: &str, next_hop: &str) -> Self {
        self.routes
            .insert(destination.to_string(), next_hop.to_string());
        self
    }

    pub fn next_hop(&self, destination_node: &str) -> Option<&str> {
        self.routes.get(destination_node).map(String::as_str)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        NodeConfigFile::parse(text)?.into_config("")
    }
}

/// A configuration problem located by a field path such as
/// `nodes[1].policy.mode`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockFile {
    #[serde(default)]
    pub offset_s: f64,
    #[serde(default)]
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_hex: Option<String>,
}

impl Default for PolicyFile {
    fn default() -> Self {
        PolicyFile {
            mode: "none".into(),
            key_hex: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpiryFile {
    #[serde(default)]
    pub future_tolerance_s: u64,
}

fn default_storage_limit() -> usize {
    1000
}

/// JSON form of [`NodeConfig`]. `peers` is only read by the live node and
/// maps a neighbour's node id to its `host:port`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfigFile {
    pub node_id: String,
    #[serde(default)]
    pub clock: ClockFile,
    #[serde(default)]
    pub policy: PolicyFile,
    #[serde(default)]
    pub expiry: ExpiryFile,
    #[serde(default)]
    pub routes: BTreeMap<String, String>,
    #[serde(default = "default_storage_limit")]
    pub storage_limit: usize,
    #[serde(default)]
    pub age_block_default: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub peers: BTreeMap<String, String>,
}

pub fn valid_node_id(id: &str) -> bool {
    !id.is_empty() && id.bytes().all(|b| b.is_ascii_graphic() && b != b'/')
}

impl NodeConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::new("", e.to_string()))
    }

    /// Validates and converts; `prefix` is prepended to error paths.
    pub fn into_config(self, prefix: &str) -> Result<NodeConfig, ConfigError> {
        let at = |field: &str| {
            if prefix.is_empty() {
                field.to_string()
            } else {
                format!("{prefix}.{field}")
            }
        };
        if !valid_node_id(&self.node_id) {
            return Err(ConfigError::new(
                at("node_id"),
                format!("invalid node id {:?}", self.node_id),
            ));
        }
        let clock = ClockModel::new(self.clock.offset_s, self.clock.drift);
        if !clock.offset_s.is_finite() {
            return Err(ConfigError::new(
                at("clock.offset_s"),
                "offset must be finite",
            ));
        }
        if !clock.is_valid() {
            return Err(ConfigError::new(
                at("clock.drift"),
                format!("|drift| must be below {MAX_DRIFT}"),
            ));
        }
        let mode = VerificationMode::parse(&self.policy.mode).ok_or_else(|| {
            ConfigError::new(
                at("policy.mode"),
                format!(
                    "unknown mode {:?} (expected none, reliability or authenticated)",
                    self.policy.mode
                ),
            )
        })?;
        let key = match &self.policy.key_hex {
            Some(h) => Some(
                hex::decode(h)
                    .map_err(|e| ConfigError::new(at("policy.key_hex"), e.to_string()))?,
            ),
            None => None,
        };
        let policy = VerificationPolicy::new(mode, key).map_err(|_| {
            ConfigError::new(at("policy.key_hex"), "authenticated mode requires a key")
        })?;
        if self.storage_limit == 0 {
            return Err(ConfigError::new(at("storage_limit"), "must be at least 1"));
        }
        for (dest, hop) in &self.routes {
            if !valid_node_id(dest) || !valid_node_id(hop) {
                return Err(ConfigError::new(
                    at(&format!("routes.{dest}")),
                    "invalid node id in route",
                ));
            }
        }
        Ok(NodeConfig {
            node_id: self.node_id,
            clock,
            policy,
            expiry: ExpiryPolicy {
                future_tolerance: self.expiry.future_tolerance_s,
            },
            routes: self.routes,
            storage_limit: self.storage_limit,
            age_block_default: self.age_block_default,
        })
    }

    pub fn from_config(config: &NodeConfig) -> Self {
        NodeConfigFile {
            node_id: config.node_id.clone(),
            clock: ClockFile {
                offset_s: config.clock.offset_s,
                drift: config.clock.drift,
            },
            policy: PolicyFile {
                mode: config.policy.mode().as_str().to_string(),
                key_hex: config.policy.key().map(hex::encode),
            },
            expiry: ExpiryFile {
                future_tolerance_s: config.expiry.future_tolerance,
            },
            routes: config.routes.clone(),
            storage_limit: config.storage_limit,
            age_block_default: config.age_block_default,
            peers: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Delivered,
    Queued,
    DroppedExpired,
    DroppedInvalidTimestamp,
    DroppedIntegrity,
    DroppedStorageFull,
    /// Set by an observer holding ground truth; agents never produce it.
    DeliveredCorruptUndetected,
}

impl Disposition {
    pub fn as_str(self) -> &'static str {
        match self {
            Disposition::Delivered => "delivered",
            Disposition::Queued => "queued",
            Disposition::DroppedExpired => "dropped_expired",
            Disposition::DroppedInvalidTimestamp => "dropped_invalid_timestamp",
            Disposition::DroppedIntegrity => "dropped_integrity",
            Disposition::DroppedStorageFull => "dropped_storage_full",
            Disposition::DeliveredCorruptUndetected => "delivered_corrupt_undetected",
        }
    }

    fn from_expiry(status: ExpiryStatus) -> Option<Self> {
        match status {
            ExpiryStatus::Live => None,
            ExpiryStatus::Expired => Some(Disposition::DroppedExpired),
            ExpiryStatus::InvalidFutureTimestamp => Some(Disposition::DroppedInvalidTimestamp),
        }
    }
}

impl fmt::Display for Disposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of handing one bundle to an agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Receipt {
    pub disposition: Disposition,
    /// `None` when the bundle was rejected before verification.
    pub verdict: Option<Verdict>,
    /// Local clock reading used for the expiry decision.
    pub local_now: UtcSeconds,
}

/// A relay-side edit applied to bundles on their way out, without
/// recomputing any integrity block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mutation {
    SetLifetime {
        lifetime_s: u64,
    },
    SetCreationTimestamp {
        creation_ts: u64,
    },
    SetDestination {
        destination: EndpointId,
    },
    SetAge {
        age_ms: u64,
    },
    RemoveIntegrity,
    ReplaceExtensionBody {
        block_type: u8,
        #[serde(with = "hex::serde")]
        body_hex: Vec<u8>,
    },
    InsertExtension {
        block_type: u8,
        #[serde(with = "hex::serde")]
        body_hex: Vec<u8>,
    },
    RemoveExtension {
        block_type: u8,
    },
}

impl Mutation {
    pub fn describe(&self) -> String {
        match self {
            Mutation::SetLifetime { lifetime_s } => format!("set_lifetime {lifetime_s}"),
            Mutation::SetCreationTimestamp { creation_ts } => {
                format!("set_creation_timestamp {creation_ts}")
            }
            Mutation::SetDestination { destination } => format!("set_destination {destination}"),
            Mutation::SetAge { age_ms } => format!("set_age {age_ms}"),
            Mutation::RemoveIntegrity => "remove_integrity".into(),
            Mutation::ReplaceExtensionBody { block_type, .. } => {
                format!("replace_extension_body {block_type}")
            }
            Mutation::InsertExtension { block_type, .. } => {
                format!("insert_extension {block_type}")
            }
            Mutation::RemoveExtension { block_type } => format!("remove_extension {block_type}"),
        }
    }
}

fn is_reserved_block_type(t: u8) -> bool {
    matches!(
        t,
        wire::BLOCK_PAYLOAD | wire::BLOCK_AGE | wire::BLOCK_INTEGRITY
    )
}

pub fn mutate_in_transit(bundle: &Bundle, mutation: &Mutation) -> Result<Bundle, AgentError> {
    let mut out = bundle.clone();
    match mutation {
        Mutation::SetLifetime { lifetime_s } => {
            if *lifetime_s == 0 {
                return Err(AgentError::Model(model::ModelError::InvalidLifetime));
            }
            out.lifetime = *lifetime_s;
        }
        Mutation::SetCreationTimestamp { creation_ts } => out.creation_ts = *creation_ts,
        Mutation::SetDestination { destination } => out.destination = destination.clone(),
        Mutation::SetAge { age_ms } => {
            let slot = out.age_ms.as_mut().ok_or(AgentError::TargetAbsent)?;
            *slot = *age_ms;
        }
        Mutation::RemoveIntegrity => {
            out.integrity.take().ok_or(AgentError::TargetAbsent)?;
        }
        Mutation::ReplaceExtensionBody {
            block_type,
            body_hex,
        } => {
            let ext = out
                .extensions
                .iter_mut()
                .find(|e| e.block_type == *block_type)
                .ok_or(AgentError::TargetAbsent)?;
            ext.body = body_hex.clone();
        }
        Mutation::InsertExtension {
            block_type,
            body_hex,
        } => {
            if is_reserved_block_type(*block_type) {
                return Err(AgentError::TargetAbsent);
            }
            out.extensions.push(ExtensionBlock {
                block_type: *block_type,
                flags: 0,
                body: body_hex.clone(),
            });
        }
        Mutation::RemoveExtension { block_type } => {
            let idx = out
                .extensions
                .iter()
                .position(|e| e.block_type == *block_type)
                .ok_or(AgentError::TargetAbsent)?;
            out.extensions.remove(idx);
        }
    }
    Ok(out)
}

/// A bundle held in storage. `tag` is an opaque label supplied by whoever
/// fed the bundle in; the agent only carries it along.
#[derive(Debug, Clone, PartialEq)]
pub struct Stored {
    pub tag: u64,
    pub bundle: Bundle,
    /// True time the bundle entered storage.
    pub stored_at_ms: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub tag: u64,
    pub bundle: Bundle,
    pub next_hop: String,
    /// Outcome of this node's tamper rule, when one is configured.
    pub mutation: Option<Result<String, AgentError>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dropped {
    pub tag: u64,
    pub bundle: Bundle,
    pub disposition: Disposition,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DispatchOutcome {
    /// In transmission order: ascending remaining lifetime.
    pub sent: Vec<Transmission>,
    pub dropped: Vec<Dropped>,
}

/// Protection requested for an originated bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Protection {
    pub suite: SuiteId,
    pub coverage: Coverage,
}

#[derive(Debug, Clone)]
pub struct Agent {
    config: NodeConfig,
    clock_start_ms: i64,
    store: Vec<Stored>,
    sequence: SequenceCounter,
    tamper: Option<Mutation>,
}

impl Agent {
    /// `clock_start_ms` is the true time from which clock drift accumulates.
    pub fn new(config: NodeConfig, clock_start_ms: i64) -> Self {
        Agent {
            config,
            clock_start_ms,
            store: Vec::new(),
            sequence: SequenceCounter::new(),
            tamper: None,
        }
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn node_id(&self) -> &str {
        &self.config.node_id
    }

    pub fn set_tamper(&mut self, mutation: Option<Mutation>) {
        self.tamper = mutation;
    }

    pub fn stored(&self) -> &[Stored] {
        &self.store
    }

    /// Direct storage access, for fault injection.
    pub fn stored_mut(&mut self) -> &mut Vec<Stored> {
        &mut self.store
    }

    pub fn local_ms(&self, true_ms: i64) -> i64 {
        self.config.clock.local_ms(self.clock_start_ms, true_ms)
    }

    /// Local UTC reading in whole seconds; readings before the epoch clamp
    /// to zero.
    pub fn local_now(&self, true_ms: i64) -> UtcSeconds {
        (self.local_ms(true_ms).max(0) / 1000) as UtcSeconds
    }

    fn is_local(&self, bundle: &Bundle) -> bool {
        bundle.destination.node() == Some(self.config.node_id.as_str())
    }

    fn store_or_drop(&mut self, tag: u64, bundle: Bundle, true_ms: i64) -> Disposition {
        if self.store.len() >= self.config.storage_limit {
            return Disposition::DroppedStorageFull;
        }
        self.store.push(Stored {
            tag,
            bundle,
            stored_at_ms: true_ms,
        });
        Disposition::Queued
    }

    /// Creates a bundle from this node. No expiry or integrity check runs
    /// at the origin.
    #[allow(clippy::too_many_arguments)]
    pub fn originate(
        &mut self,
        tag: u64,
        source_app: &str,
        destination: EndpointId,
        lifetime: u64,
        payload: Vec<u8>,
        protection: Option<Protection>,
        with_age_block: Option<bool>,
        true_ms: i64,
    ) -> Result<(Bundle, Disposition), AgentError> {
        let source = EndpointId::parse(&format!("dtn:{}/{}", self.config.node_id, source_app))?;
        let local_now = self.local_now(true_ms);
        let with_age = with_age_block.unwrap_or(self.config.age_block_default);
        let mut bundle = self.sequence.new_bundle(
            source,
            destination,
            lifetime,
            payload,
            local_now,
            with_age,
        )?;
        if let Some(p) = protection {
            bundle = integrity::attach_integrity(
                &bundle,
                p.suite,
                p.coverage,
                self.config.policy.key(),
            )?;
        }
        let disposition = if self.is_local(&bundle) {
            Disposition::Delivered
        } else {
            self.store_or_drop(tag, bundle.clone(), true_ms)
        };
        Ok((bundle, disposition))
    }

    pub fn receive(&mut self, tag: u64, bundle: &Bundle, true_ms: i64) -> Receipt {
        let local_now = self.local_now(true_ms);
        self.receive_at(tag, bundle, local_now, true_ms)
    }

    /// [`receive`](Self::receive) with the local clock reading supplied by
    /// the caller.
    pub fn receive_at(
        &mut self,
        tag: u64,
        bundle: &Bundle,
        local_now: UtcSeconds,
        true_ms: i64,
    ) -> Receipt {
        let status = model::is_expired(bundle, local_now, &self.config.expiry);
        if let Some(disposition) = Disposition::from_expiry(status) {
            return Receipt {
                disposition,
                verdict: None,
                local_now,
            };
        }
        let verdict = integrity::verify(bundle, &self.config.policy);
        let disposition = if verdict.is_failure() {
            Disposition::DroppedIntegrity
        } else if self.is_local(bundle) {
            Disposition::Delivered
        } else {
            self.store_or_drop(tag, bundle.clone(), true_ms)
        };
        Receipt {
            disposition,
            verdict: Some(verdict),
            local_now,
        }
    }

    /// Next hops that queued bundles are waiting on.
    pub fn pending_next_hops(&self) -> BTreeSet<String> {
        self.store
            .iter()
            .filter_map(|s| s.bundle.destination.node())
            .filter_map(|n| self.config.next_hop(n))
            .map(str::to_string)
            .collect()
    }

    pub fn dispatch(
        &mut self,
        true_ms: i64,
        contact_open: impl Fn(&str) -> bool,
    ) -> DispatchOutcome {
        let local_now = self.local_now(true_ms);
        self.dispatch_at(local_now, true_ms, contact_open)
    }

    /// Releases every queued bundle whose next hop has an open contact.
    /// Age blocks gain the residence time measured on this node's clock;
    /// bundles that turn out expired are dropped instead of sent.
    pub fn dispatch_at(
        &mut self,
        local_now: UtcSeconds,
        true_ms: i64,
        contact_open: impl Fn(&str) -> bool,
    ) -> DispatchOutcome {
        let mut outcome = DispatchOutcome::default();
        let mut ready: Vec<(std::time::Duration, usize, Transmission)> = Vec::new();
        let mut keep = Vec::with_capacity(self.store.len());

        for (order, stored) in std::mem::take(&mut self.store).into_iter().enumerate() {
            let hop = stored
                .bundle
                .destination
                .node()
                .and_then(|n| self.config.next_hop(n))
                .filter(|hop| contact_open(hop))
                .map(str::to_string);
            let Some(next_hop) = hop else {
                keep.push(stored);
                continue;
            };
            let mut bundle = stored.bundle;
            if bundle.age_ms.is_some() {
                let elapsed = (true_ms - stored.stored_at_ms).max(0) as u64;
                let residence = self.config.clock.measure_elapsed_ms(elapsed);
                bundle = model::accumulate_age(&bundle, residence).expect("age block present");
            }
            let status = model::is_expired(&bundle, local_now, &self.config.expiry);
            if let Some(disposition) = Disposition::from_expiry(status) {
                outcome.dropped.push(Dropped {
                    tag: stored.tag,
                    bundle,
                    disposition,
                });
                continue;
            }
            let remaining = model::remaining_lifetime(&bundle, local_now).unwrap_or_default();
            let mutation = self
                .tamper
                .as_ref()
                .map(|m| match mutate_in_transit(&bundle, m) {
                    Ok(edited) => {
                        bundle = edited;
                        Ok(m.describe())
                    }
                    Err(e) => Err(e),
                });
            ready.push((
                remaining,
                order,
                Transmission {
                    tag: stored.tag,
                    bundle,
                    next_hop,
                    mutation,
                },
            ));
        }
        self.store = keep;
        ready.sort_by(|a, b| match a.0.cmp(&b.0) {
            Ordering::Equal => a.1.cmp(&b.1),
            o => o,
        });
        outcome.sent = ready.into_iter().map(|(_, _, t)| t).collect();
        outcome
    }

    /// Puts an unsent transmission back into storage. Fails when storage
    /// has filled up in the meantime.
    pub fn requeue(&mut self, tx: Transmission, true_ms: i64) -> Result<(), Box<Transmission>> {
        if self.store.len() >= self.config.storage_limit {
            return Err(Box::new(tx));
        }
        self.store.push(Stored {
            tag: tx.tag,
            bundle: tx.bundle,
            stored_at_ms: true_ms,
        });
        Ok(())
    }
}
