//! Built-in scenarios, one per failure mode or remedy.
//!
//! BER values here are illustrative; they are not measurements of any real
//! link.

use crate::agent::{ClockModel, Mutation, NodeConfig};
use crate::integrity::{Coverage, SuiteId, VerificationPolicy};
use crate::model::EndpointId;

use super::scenario::{Contact, LinkFault, Scenario, TamperRule, Traffic, DEFAULT_EPOCH_S};
use super::HarnessError;

pub const PRESET_NAMES: [&str; 6] = [
    "baseline",
    "silent_corruption",
    "reliability_fix",
    "clock_skew",
    "age_fix",
    "tamper_relay",
];

pub const PRESET_SEED: u64 = 2011;

/// Transit BER on the faulty hop of the corruption presets.
pub const CORRUPTION_BER: f64 = 1e-5;
pub const CORRUPTION_BUNDLES: u32 = 1000;
pub const CORRUPTION_PAYLOAD: usize = 10 * 1024;

pub const SKEW_SOURCE_OFFSET_S: f64 = -14_400.0;
pub const SKEW_RELAY_OFFSET_S: f64 = -7_200.0;
pub const SKEW_LIFETIME_S: u64 = 3_600;

pub const TAMPER_LIFETIME_S: u64 = 60;
pub const TAMPERED_LIFETIME_S: u64 = 6;

fn always(from: &str, to: &str, duration_ms: i64, delay_ms: i64) -> Contact {
    Contact {
        from: from.into(),
        to: to.into(),
        open_ms: 0,
        close_ms: duration_ms,
        delay_ms,
    }
}

fn traffic(
    source: &str,
    dest: &str,
    size: usize,
    count: u32,
    interval_ms: i64,
    lifetime_s: u64,
) -> Traffic {
    Traffic {
        source: source.into(),
        destination: EndpointId::parse(&format!("dtn:{dest}/sink")).expect("static endpoint"),
        size,
        time_ms: 0,
        lifetime_s,
        suite: None,
        coverage: Coverage::PAYLOAD,
        count,
        interval_ms,
        age_block: None,
    }
}

/// a -> b -> c with static routes towards c.
fn chain3(name: &str, duration_ms: i64) -> Scenario {
    Scenario {
        name: name.into(),
        seed: PRESET_SEED,
        epoch_s: DEFAULT_EPOCH_S,
        duration_ms,
        nodes: vec![
            NodeConfig::new("a").route("c", "b"),
            NodeConfig::new("b").route("c", "c"),
            NodeConfig::new("c"),
        ],
        contacts: vec![
            always("a", "b", duration_ms, 100),
            always("b", "c", duration_ms, 1_000),
        ],
        faults: vec![],
        tamper: vec![],
        traffic: vec![],
    }
}

fn baseline() -> Scenario {
    let mut s = chain3("baseline", 200_000);
    s.traffic.push(traffic("a", "c", 1024, 100, 1_000, 3_600));
    s
}

/// Deployed reality: no integrity block, no verification, a noisy last hop.
fn silent_corruption() -> Scenario {
    let duration_ms = 1_200_000;
    let mut s = chain3("silent_corruption", duration_ms);
    s.faults.push(LinkFault {
        from: "b".into(),
        to: "c".into(),
        transit_ber: CORRUPTION_BER,
        storage_corrupt_prob: 0.0,
        storage_flip_bits: 1,
        rng_seed: None,
    });
    s.traffic.push(traffic(
        "a",
        "c",
        CORRUPTION_PAYLOAD,
        CORRUPTION_BUNDLES,
        1_000,
        3_600,
    ));
    s
}

/// Same fault stream, with a CRC-32 block over the payload checked at
/// every hop.
fn reliability_fix() -> Scenario {
    let mut s = silent_corruption();
    s.name = "reliability_fix".into();
    for n in &mut s.nodes {
        n.policy = VerificationPolicy::reliability(None);
    }
    for t in &mut s.traffic {
        t.suite = Some(SuiteId::Crc32ReliabilityOnly);
        t.coverage = Coverage::PAYLOAD;
    }
    s
}

/// The source runs four hours slow and the relay two hours slow, so every
/// timestamp reaches the relay two hours stale against a one-hour
/// lifetime.
fn clock_skew() -> Scenario {
    let mut s = chain3("clock_skew", 300_000);
    s.nodes[0].clock = ClockModel::new(SKEW_SOURCE_OFFSET_S, 0.0);
    s.nodes[1].clock = ClockModel::new(SKEW_RELAY_OFFSET_S, 0.0);
    s.traffic
        .push(traffic("a", "c", 1024, 100, 1_000, SKEW_LIFETIME_S));
    s
}

fn age_fix() -> Scenario {
    let mut s = clock_skew();
    s.name = "age_fix".into();
    s.nodes[0].age_block_default = true;
    s
}

/// a -> b -> c -> d. Relay b rewrites lifetime 60 -> 6 on the way out and
/// c holds bundles until its contact to d opens at 40 s.
fn tamper_relay() -> Scenario {
    let duration_ms = 120_000;
    let reliability = VerificationPolicy::reliability(None);
    let mut nodes = vec![
        NodeConfig::new("a").route("d", "b"),
        NodeConfig::new("b").route("d", "c"),
        NodeConfig::new("c").route("d", "d"),
        NodeConfig::new("d"),
    ];
    for n in &mut nodes[1..] {
        n.policy = reliability.clone();
    }
    let mut t = traffic("a", "d", 512, 20, 1_000, TAMPER_LIFETIME_S);
    t.suite = Some(SuiteId::Crc32ReliabilityOnly);
    t.coverage = Coverage::PAYLOAD;
    Scenario {
        name: "tamper_relay".into(),
        seed: PRESET_SEED,
        epoch_s: DEFAULT_EPOCH_S,
        duration_ms,
        nodes,
        contacts: vec![
            always("a", "b", duration_ms, 100),
            always("b", "c", duration_ms, 100),
            Contact {
                from: "c".into(),
                to: "d".into(),
                open_ms: 40_000,
                close_ms: duration_ms,
                delay_ms: 100,
            },
        ],
        faults: vec![],
        tamper: vec![TamperRule {
            node: "b".into(),
            mutation: Mutation::SetLifetime {
                lifetime_s: TAMPERED_LIFETIME_S,
            },
        }],
        traffic: vec![t],
    }
}

pub fn preset(name: &str) -> Result<Scenario, HarnessError> {
    match name {
        "baseline" => Ok(baseline()),
        "silent_corruption" => Ok(silent_corruption()),
        "reliability_fix" => Ok(reliability_fix()),
        "clock_skew" => Ok(clock_skew()),
        "age_fix" => Ok(age_fix()),
        "tamper_relay" => Ok(tamper_relay()),
        other => Err(HarnessError::UnknownPreset(other.to_string())),
    }
}
