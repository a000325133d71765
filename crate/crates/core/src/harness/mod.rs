//! Scenarios, simulation, reporting, presets and live TCP nodes.

use std::time::Instant;

use thiserror::Error;

use crate::agent::ConfigError;
use crate::integrity;

pub mod live;
pub mod metrics;
pub mod presets;
pub mod report;
pub mod scenario;
pub mod sim;

pub use metrics::{EventTrace, Metrics, NodeMetrics, Outcome, TraceRecord};
pub use presets::{preset, PRESET_NAMES};
pub use report::{report, ReportFormat};
pub use scenario::{load_scenario, parse_scenario, Scenario};
pub use sim::{run, RunOutput};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Validation(ConfigError),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("{0}")]
    Io(String),
}

/// Wall-clock cost of the two integrity suites over the same data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteCost {
    pub payload_bytes: usize,
    pub iterations: u32,
    pub crc32_ns_per_op: f64,
    pub hmac_sha256_ns_per_op: f64,
}

impl SuiteCost {
    pub fn ratio(&self) -> f64 {
        self.hmac_sha256_ns_per_op / self.crc32_ns_per_op.max(f64::MIN_POSITIVE)
    }
}

/// Times both suites over a `payload_bytes` buffer. Reported only; no
/// threshold is attached to the ratio.
pub fn measure_suite_cost(payload_bytes: usize, iterations: u32) -> SuiteCost {
    let data: Vec<u8> = (0..payload_bytes).map(|i| (i * 31 + 7) as u8).collect();
    let key = [0x42u8; 32];
    let iterations = iterations.max(1);

    let start = Instant::now();
    let mut acc = 0u32;
    for _ in 0..iterations {
        acc ^= integrity::crc32(std::hint::black_box(&data));
    }
    let crc = start.elapsed();
    std::hint::black_box(acc);

    let start = Instant::now();
    let mut acc = 0u8;
    for _ in 0..iterations {
        acc ^= integrity::hmac_sha256(&key, std::hint::black_box(&data))[0];
    }
    let hmac = start.elapsed();
    std::hint::black_box(acc);

    SuiteCost {
        payload_bytes,
        iterations,
        crc32_ns_per_op: crc.as_nanos() as f64 / f64::from(iterations),
        hmac_sha256_ns_per_op: hmac.as_nanos() as f64 / f64::from(iterations),
    }
}
