//! Bundle values, creation, and the two expiry disciplines.
//!
//! A bundle without an age block expires by UTC arithmetic on its creation
//! timestamp, read against the *holding node's* clock. A bundle carrying an
//! age block expires purely on accumulated age; its timestamp is ignored.

use std::collections::HashMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrity::IntegrityBlock;

/// Seconds since 2000-01-01T00:00:00 UTC.
pub type UtcSeconds = u64;

/// Offset between the Unix epoch and 2000-01-01T00:00:00 UTC.
pub const DTN_EPOCH_UNIX_SECS: u64 = 946_684_800;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid endpoint id {0:?}")]
    InvalidEndpoint(String),
    #[error("lifetime must be greater than zero")]
    InvalidLifetime,
    #[error("bundle carries no age block")]
    NoAgeBlock,
    #[error("bundle already expired")]
    AlreadyExpired,
}

/// Textual endpoint identifier, `dtn:<node>/<app>` or the null endpoint
/// `dtn:none`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EndpointId(String);

impl EndpointId {
    pub const NONE: &'static str = "dtn:none";

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let invalid = || ModelError::InvalidEndpoint(text.to_string());
        if text.is_empty() || !text.bytes().all(|b| (0x20..=0x7e).contains(&b)) {
            return Err(invalid());
        }
        let rest = text.strip_prefix("dtn:").ok_or_else(invalid)?;
        if rest == "none" {
            return Ok(EndpointId(text.to_string()));
        }
        let (node, app) = rest.split_once('/').ok_or_else(invalid)?;
        if node.is_empty() || app.is_empty() {
            return Err(invalid());
        }
        Ok(EndpointId(text.to_string()))
    }

    pub fn null() -> Self {
        EndpointId(Self::NONE.to_string())
    }

    pub fn is_null(&self) -> bool {
        self.0 == Self::NONE
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Node part; `None` for the null endpoint.
    pub fn node(&self) -> Option<&str> {
        self.parts().map(|(n, _)| n)
    }

    pub fn app(&self) -> Option<&str> {
        self.parts().map(|(_, a)| a)
    }

    fn parts(&self) -> Option<(&str, &str)> {
        self.0.strip_prefix("dtn:")?.split_once('/')
    }
}

impl fmt::Display for EndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for EndpointId {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        EndpointId::parse(&s)
    }
}

impl From<EndpointId> for String {
    fn from(e: EndpointId) -> Self {
        e.0
    }
}

impl std::str::FromStr for EndpointId {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EndpointId::parse(s)
    }
}

/// A canonical block this stack does not interpret. Carried through
/// unchanged unless a relay edits it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtensionBlock {
    /// Any code other than payload (1), age (10) and integrity (13).
    pub block_type: u8,
    /// Block flags without the last-block bit, which the encoder manages.
    pub flags: u64,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bundle {
    pub processing_flags: u64,
    pub destination: EndpointId,
    pub source: EndpointId,
    pub creation_ts: UtcSeconds,
    pub creation_seq: u64,
    /// Seconds; always positive.
    pub lifetime: u64,
    /// Body of the bundle-age block, in milliseconds.
    pub age_ms: Option<u64>,
    pub integrity: Option<IntegrityBlock>,
    pub extensions: Vec<ExtensionBlock>,
    pub payload: Vec<u8>,
}

impl Bundle {
    /// Builds a bundle from raw primary fields with no extension blocks.
    /// Callers must keep `lifetime > 0`.
    pub fn new_unchecked(
        source: EndpointId,
        destination: EndpointId,
        creation_ts: UtcSeconds,
        creation_seq: u64,
        lifetime: u64,
        payload: Vec<u8>,
    ) -> Self {
        Bundle {
            processing_flags: 0,
            destination,
            source,
            creation_ts,
            creation_seq,
            lifetime,
            age_ms: None,
            integrity: None,
            extensions: Vec::new(),
            payload,
        }
    }

    pub fn id(&self) -> BundleId {
        BundleId {
            source: self.source.clone(),
            creation_ts: self.creation_ts,
            creation_seq: self.creation_seq,
        }
    }

    /// UTC instant after which the bundle is expired under the timestamp
    /// discipline.
    pub fn expiry_deadline(&self) -> UtcSeconds {
        self.creation_ts.saturating_add(self.lifetime)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BundleId {
    pub source: EndpointId,
    pub creation_ts: UtcSeconds,
    pub creation_seq: u64,
}

impl fmt::Display for BundleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}.{}",
            self.source, self.creation_ts, self.creation_seq
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExpiryPolicy {
    /// How far ahead of the local clock a creation timestamp may be before
    /// the bundle is rejected.
    pub future_tolerance: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExpiryStatus {
    Live,
    Expired,
    InvalidFutureTimestamp,
}

/// Hands out creation sequence numbers, counting per (source, timestamp).
#[derive(Debug, Default, Clone)]
pub struct SequenceCounter {
    next: HashMap<(EndpointId, UtcSeconds), u64>,
}

impl SequenceCounter {
    pub fn new() -> Self {
        Self::default()
    }

    fn take(&mut self, source: &EndpointId, ts: UtcSeconds) -> u64 {
        let slot = self.next.entry((source.clone(), ts)).or_insert(0);
        let seq = *slot;
        *slot += 1;
        seq
    }

    /// Creates a bundle stamped with the creating node's local clock reading.
    pub fn new_bundle(
        &mut self,
        source: EndpointId,
        destination: EndpointId,
        lifetime: u64,
        payload: Vec<u8>,
        local_now: UtcSeconds,
        with_age_block: bool,
    ) -> Result<Bundle, ModelError> {
        if lifetime == 0 {
            return Err(ModelError::InvalidLifetime);
        }
        let seq = self.take(&source, local_now);
        let mut bundle =
            Bundle::new_unchecked(source, destination, local_now, seq, lifetime, payload);
        if with_age_block {
            bundle.age_ms = Some(0);
        }
        Ok(bundle)
    }
}

pub fn is_expired(bundle: &Bundle, local_now: UtcSeconds, policy: &ExpiryPolicy) -> ExpiryStatus {
    if let Some(age_ms) = bundle.age_ms {
        // age/1000 > lifetime, without rounding
        return if u128::from(age_ms) > u128::from(bundle.lifetime) * 1000 {
            ExpiryStatus::Expired
        } else {
            ExpiryStatus::Live
        };
    }
    if bundle.creation_ts > local_now.saturating_add(policy.future_tolerance) {
        ExpiryStatus::InvalidFutureTimestamp
    } else if local_now > bundle.expiry_deadline() {
        ExpiryStatus::Expired
    } else {
        ExpiryStatus::Live
    }
}

pub fn accumulate_age(bundle: &Bundle, residence_ms: u64) -> Result<Bundle, ModelError> {
    let age = bundle.age_ms.ok_or(ModelError::NoAgeBlock)?;
    let mut next = bundle.clone();
    next.age_ms = Some(age.saturating_add(residence_ms));
    Ok(next)
}

/// Time left before expiry. A bundle sitting exactly on its deadline is
/// live with zero remaining.
pub fn remaining_lifetime(bundle: &Bundle, local_now: UtcSeconds) -> Result<Duration, ModelError> {
    let lifetime_ms = u128::from(bundle.lifetime) * 1000;
    let left_ms = match bundle.age_ms {
        Some(age_ms) => lifetime_ms.checked_sub(u128::from(age_ms)),
        None => u128::from(bundle.expiry_deadline())
            .checked_sub(u128::from(local_now))
            .map(|s| s * 1000),
    };
    left_ms
        .map(|ms| Duration::from_millis(ms as u64))
        .ok_or(ModelError::AlreadyExpired)
}
