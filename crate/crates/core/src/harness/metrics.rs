use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agent::Disposition;

/// Outcome counters for one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub created: u64,
    pub delivered_clean: u64,
    pub delivered_corrupt_undetected: u64,
    pub dropped_expired: u64,
    pub dropped_invalid_timestamp: u64,
    pub dropped_integrity: u64,
    pub dropped_decode_error: u64,
    pub dropped_storage_full: u64,
    /// Held in storage or still in flight when the run ended.
    pub still_queued: u64,
}

/// Why a bundle's journey ended, or `Queued` if it had not ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    DeliveredClean,
    DeliveredCorruptUndetected,
    Dropped(Disposition),
    DroppedDecodeError,
}

impl Metrics {
    pub fn drops(&self) -> u64 {
        self.dropped_expired
            + self.dropped_invalid_timestamp
            + self.dropped_integrity
            + self.dropped_decode_error
            + self.dropped_storage_full
    }

    pub fn delivered(&self) -> u64 {
        self.delivered_clean + self.delivered_corrupt_undetected
    }

    /// `created` equals deliveries plus drops plus bundles still held.
    pub fn conservation_holds(&self) -> bool {
        self.created == self.delivered() + self.drops() + self.still_queued
    }

    pub fn record(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::DeliveredClean => self.delivered_clean += 1,
            Outcome::DeliveredCorruptUndetected => self.delivered_corrupt_undetected += 1,
            Outcome::DroppedDecodeError => self.dropped_decode_error += 1,
            Outcome::Dropped(d) => match d {
                Disposition::DroppedExpired => self.dropped_expired += 1,
                Disposition::DroppedInvalidTimestamp => self.dropped_invalid_timestamp += 1,
                Disposition::DroppedIntegrity => self.dropped_integrity += 1,
                Disposition::DroppedStorageFull => self.dropped_storage_full += 1,
                other => panic!("{other} is not a drop"),
            },
        }
    }

    pub fn fields(&self) -> [(&'static str, u64); 9] {
        [
            ("created", self.created),
            ("delivered_clean", self.delivered_clean),
            (
                "delivered_corrupt_undetected",
                self.delivered_corrupt_undetected,
            ),
            ("dropped_expired", self.dropped_expired),
            ("dropped_invalid_timestamp", self.dropped_invalid_timestamp),
            ("dropped_integrity", self.dropped_integrity),
            ("dropped_decode_error", self.dropped_decode_error),
            ("dropped_storage_full", self.dropped_storage_full),
            ("still_queued", self.still_queued),
        ]
    }
}

/// Per-node view: `created` counts bundles originated at the node, the
/// other counters count outcomes that happened there. `still_queued`
/// covers only the node's storage, not bundles in flight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node: String,
    #[serde(flatten)]
    pub counts: Metrics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time_ms: i64,
    pub node: String,
    pub event: String,
    pub bundle: String,
    pub detail: String,
}

/// Ordered log of everything the simulator did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventTrace {
    records: Vec<TraceRecord>,
}

impl EventTrace {
    pub fn push(&mut self, time_ms: i64, node: &str, event: &str, bundle: String, detail: String) {
        debug_assert!(self.records.last().is_none_or(|r| r.time_ms <= time_ms));
        self.records.push(TraceRecord {
            time_ms,
            node: node.to_string(),
            event: event.to_string(),
            bundle,
            detail,
        });
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_time_ordered(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[0].time_ms <= w[1].time_ms)
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(EventTrace { records })
    }

    pub fn count(&self, event: &str) -> usize {
        self.records.iter().filter(|r| r.event == event).count()
    }

    pub fn count_at(&self, node: &str, event: &str) -> usize {
        self.records
            .iter()
            .filter(|r| r.node == node && r.event == event)
            .count()
    }

    /// Plain-text summary of event counts, for debugging.
    pub fn summary(&self) -> String {
        let mut counts = std::collections::BTreeMap::new();
        for r in &self.records {
            *counts
                .entry((r.node.as_str(), r.event.as_str()))
                .or_insert(0u64) += 1;
        }
        let mut out = String::new();
        for ((node, event), n) in counts {
            let _ = writeln!(out, "{node:>8} {event:<30} {n}");
        }
        out
    }
}
