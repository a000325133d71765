//! Scenario files: JSON on disk, validated into [`Scenario`].
//!
//! Times in files are seconds (fractions allowed); the simulator works in
//! integer milliseconds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{ConfigError, Mutation, NodeConfig, NodeConfigFile};
use crate::channel::FaultModel;
use crate::integrity::{Coverage, SuiteId, VerificationMode};
use crate::model::EndpointId;

use super::HarnessError;

pub const DEFAULT_EPOCH_S: u64 = 700_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Contact {
    pub from: String,
    pub to: String,
    pub open_ms: i64,
    pub close_ms: i64,
    /// One-way propagation delay.
    pub delay_ms: i64,
}

impl Contact {
    pub fn is_open(&self, t_ms: i64) -> bool {
        self.open_ms <= t_ms && t_ms < self.close_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkFault {
    pub from: String,
    pub to: String,
    pub transit_ber: f64,
    pub storage_corrupt_prob: f64,
    pub storage_flip_bits: u32,
    /// Explicit generator seed; derived from the scenario seed and link
    /// index when absent.
    pub rng_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TamperRule {
    pub node: String,
    pub mutation: Mutation,
}

/// One traffic entry; expands to `count` bundles spaced `interval_ms`.
#[derive(Debug, Clone, PartialEq)]
pub struct Traffic {
    pub source: String,
    pub destination: EndpointId,
    pub size: usize,
    pub time_ms: i64,
    pub lifetime_s: u64,
    pub suite: Option<SuiteId>,
    pub coverage: Coverage,
    pub count: u32,
    pub interval_ms: i64,
    /// Overrides the source node's `age_block_default`.
    pub age_block: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// UTC seconds since 2000 at simulation time zero.
    pub epoch_s: u64,
    pub duration_ms: i64,
    pub nodes: Vec<NodeConfig>,
    pub contacts: Vec<Contact>,
    pub faults: Vec<LinkFault>,
    pub tamper: Vec<TamperRule>,
    pub traffic: Vec<Traffic>,
}

impl Scenario {
    pub fn node(&self, id: &str) -> Option<&NodeConfig> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut NodeConfig> {
        self.nodes.iter_mut().find(|n| n.node_id == id)
    }

    pub fn total_bundles(&self) -> u64 {
        self.traffic.iter().map(|t| u64::from(t.count)).sum()
    }

    /// Sets the verification mode on every node, keeping keys.
    pub fn set_policy_everywhere(&mut self, mode: VerificationMode) {
        for n in &mut self.nodes {
            let key = n.policy.key().map(<[u8]>::to_vec);
            n.policy = crate::integrity::VerificationPolicy::new(mode, key).expect("key kept");
        }
    }

    pub fn to_file(&self) -> ScenarioFile {
        let secs = |ms: i64| ms as f64 / 1000.0;
        ScenarioFile {
            name: self.name.clone(),
            seed: self.seed,
            epoch_s: self.epoch_s,
            duration_s: secs(self.duration_ms),
            nodes: self.nodes.iter().map(NodeConfigFile::from_config).collect(),
            contacts: self
                .contacts
                .iter()
                .map(|c| ContactFile {
                    from: c.from.clone(),
                    to: c.to.clone(),
                    open_s: secs(c.open_ms),
                    close_s: secs(c.close_ms),
                    delay_s: secs(c.delay_ms),
                })
                .collect(),
            faults: self
                .faults
                .iter()
                .map(|f| FaultFile {
                    from: f.from.clone(),
                    to: f.to.clone(),
                    transit_ber: f.transit_ber,
                    storage_corrupt_prob: f.storage_corrupt_prob,
                    storage_flip_bits: f.storage_flip_bits,
                    rng_seed: f.rng_seed,
                })
                .collect(),
            tamper: self
                .tamper
                .iter()
                .map(|t| TamperFile {
                    node: t.node.clone(),
                    mutation: t.mutation.clone(),
                })
                .collect(),
            traffic: self
                .traffic
                .iter()
                .map(|t| TrafficFile {
                    source: t.source.clone(),
                    destination: t.destination.to_string(),
                    size: t.size,
                    time_s: secs(t.time_ms),
                    lifetime_s: t.lifetime_s,
                    suite: t.suite.map_or(0, SuiteId::code),
                    coverage: coverage_name(t.coverage).to_string(),
                    count: t.count,
                    interval_s: secs(t.interval_ms),
                    age_block: t.age_block,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("scenario serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactFile {
    pub from: String,
    pub to: String,
    pub open_s: f64,
    pub close_s: f64,
    #[serde(default)]
    pub delay_s: f64,
}

fn one_bit() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultFile {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub transit_ber: f64,
    #[serde(default)]
    pub storage_corrupt_prob: f64,
    #[serde(default = "one_bit")]
    pub storage_flip_bits: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TamperFile {
    pub node: String,
    pub mutation: Mutation,
}

fn one() -> u32 {
    1
}

fn default_coverage() -> String {
    "both".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficFile {
    pub source: String,
    pub destination: String,
    pub size: usize,
    pub time_s: f64,
    pub lifetime_s: u64,
    /// 0 = no integrity block, 1 = CRC-32, 2 = HMAC-SHA256.
    #[serde(default)]
    pub suite: u8,
    #[serde(default = "default_coverage")]
    pub coverage: String,
    #[serde(default = "one")]
    pub count: u32,
    #[serde(default)]
    pub interval_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_block: Option<bool>,
}

fn default_epoch() -> u64 {
    DEFAULT_EPOCH_S
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epoch")]
    pub epoch_s: u64,
    pub duration_s: f64,
    pub nodes: Vec<NodeConfigFile>,
    #[serde(default)]
    pub contacts: Vec<ContactFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<FaultFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tamper: Vec<TamperFile>,
    #[serde(default)]
    pub traffic: Vec<TrafficFile>,
}

pub fn coverage_name(c: Coverage) -> &'static str {
    match c.bits() {
        0b01 => "primary",
        0b10 => "payload",
        _ => "both",
    }
}

fn parse_coverage(s: &str) -> Option<Coverage> {
    match s {
        "primary" => Some(Coverage::PRIMARY),
        "payload" => Some(Coverage::PAYLOAD),
        "both" => Some(Coverage::BOTH),
        _ => None,
    }
}

fn to_ms(path: &str, secs: f64) -> Result<i64, ConfigError> {
    if !secs.is_finite() || secs < 0.0 {
        return Err(ConfigError::new(
            path,
            format!("time {secs} must be finite and non-negative"),
        ));
    }
    Ok((secs * 1000.0).round() as i64)
}

impl ScenarioFile {
    pub fn validate(self) -> Result<Scenario, ConfigError> {
        let duration_ms = to_ms("duration_s", self.duration_s)?;
        if duration_ms <= 0 {
            return Err(ConfigError::new("duration_s", "must be positive"));
        }
        if self.nodes.is_empty() {
            return Err(ConfigError::new("nodes", "at least one node required"));
        }
        let mut nodes = Vec::with_capacity(self.nodes.len());
        let mut ids = BTreeSet::new();
        for (i, n) in self.nodes.into_iter().enumerate() {
            let path = format!("nodes[{i}]");
            let cfg = n.into_config(&path)?;
            if !ids.insert(cfg.node_id.clone()) {
                return Err(ConfigError::new(
                    format!("{path}.node_id"),
                    format!("duplicate node id {:?}", cfg.node_id),
                ));
            }
            nodes.push(cfg);
        }
        let known = |path: String, id: &str| -> Result<(), ConfigError> {
            if ids.contains(id) {
                Ok(())
            } else {
                Err(ConfigError::new(path, format!("unknown node {id:?}")))
            }
        };

        for (i, n) in nodes.iter().enumerate() {
            for (dest, hop) in &n.routes {
                known(format!("nodes[{i}].routes.{dest}"), hop)?;
            }
        }

        let mut contacts = Vec::with_capacity(self.contacts.len());
        for (i, c) in self.contacts.into_iter().enumerate() {
            let p = |f: &str| format!("contacts[{i}].{f}");
            known(p("from"), &c.from)?;
            known(p("to"), &c.to)?;
            if c.from == c.to {
                return Err(ConfigError::new(
                    p("to"),
                    "contact must join two different nodes",
                ));
            }
            let open_ms = to_ms(&p("open_s"), c.open_s)?;
            let close_ms = to_ms(&p("close_s"), c.close_s)?;
            let delay_ms = to_ms(&p("delay_s"), c.delay_s)?;
            if close_ms <= open_ms {
                return Err(ConfigError::new(
                    p("close_s"),
                    "contact close must be after open",
                ));
            }
            contacts.push(Contact {
                from: c.from,
                to: c.to,
                open_ms,
                close_ms,
                delay_ms,
            });
        }

        let mut faults = Vec::with_capacity(self.faults.len());
        let mut faulted = BTreeSet::new();
        for (i, f) in self.faults.into_iter().enumerate() {
            let p = |field: &str| format!("faults[{i}].{field}");
            known(p("from"), &f.from)?;
            known(p("to"), &f.to)?;
            if !contacts.iter().any(|c| c.from == f.from && c.to == f.to) {
                return Err(ConfigError::new(
                    p("to"),
                    format!("no contact from {} to {}", f.from, f.to),
                ));
            }
            if !faulted.insert((f.from.clone(), f.to.clone())) {
                return Err(ConfigError::new(p("to"), "link already has a fault model"));
            }
            let model = FaultModel {
                transit_ber: f.transit_ber,
                storage_corrupt_prob: f.storage_corrupt_prob,
                storage_flip_bits: f.storage_flip_bits,
                rng_seed: 0,
            };
            model.validate().map_err(|e| {
                let field = match e {
                    crate::channel::FaultModelError::TransitBer(_) => "transit_ber",
                    crate::channel::FaultModelError::StorageProb(_) => "storage_corrupt_prob",
                    crate::channel::FaultModelError::FlipBits => "storage_flip_bits",
                };
                ConfigError::new(p(field), e.to_string())
            })?;
            faults.push(LinkFault {
                from: f.from,
                to: f.to,
                transit_ber: f.transit_ber,
                storage_corrupt_prob: f.storage_corrupt_prob,
                storage_flip_bits: f.storage_flip_bits,
                rng_seed: f.rng_seed,
            });
        }

        let mut tamper = Vec::with_capacity(self.tamper.len());
        let mut tampered = BTreeSet::new();
        for (i, t) in self.tamper.into_iter().enumerate() {
            known(format!("tamper[{i}].node"), &t.node)?;
            if !tampered.insert(t.node.clone()) {
                return Err(ConfigError::new(
                    format!("tamper[{i}].node"),
                    "node already has a tamper rule",
                ));
            }
            tamper.push(TamperRule {
                node: t.node,
                mutation: t.mutation,
            });
        }

        let mut traffic = Vec::with_capacity(self.traffic.len());
        for (i, t) in self.traffic.into_iter().enumerate() {
            let p = |f: &str| format!("traffic[{i}].{f}");
            known(p("source"), &t.source)?;
            let destination = EndpointId::parse(&t.destination)
                .ok()
                .filter(|e| e.node().is_some())
                .ok_or_else(|| {
                    ConfigError::new(
                        p("destination"),
                        format!("invalid endpoint {:?}", t.destination),
                    )
                })?;
            if t.lifetime_s == 0 {
                return Err(ConfigError::new(
                    p("lifetime_s"),
                    "lifetime must be positive",
                ));
            }
            if t.count == 0 {
                return Err(ConfigError::new(p("count"), "count must be at least 1"));
            }
            let suite = match t.suite {
                0 => None,
                code => Some(SuiteId::from_code(code).ok_or_else(|| {
                    ConfigError::new(p("suite"), format!("unknown suite {code}"))
                })?),
            };
            let coverage = parse_coverage(&t.coverage).ok_or_else(|| {
                ConfigError::new(
                    p("coverage"),
                    format!(
                        "unknown coverage {:?} (expected payload, primary or both)",
                        t.coverage
                    ),
                )
            })?;
            if suite == Some(SuiteId::HmacSha256) {
                let src = nodes
                    .iter()
                    .find(|n| n.node_id == t.source)
                    .expect("source checked");
                if src.policy.key().is_none() {
                    return Err(ConfigError::new(
                        p("suite"),
                        "suite 2 needs a key on the source node",
                    ));
                }
            }
            let time_ms = to_ms(&p("time_s"), t.time_s)?;
            let interval_ms = to_ms(&p("interval_s"), t.interval_s)?;
            let last = time_ms + interval_ms * i64::from(t.count - 1);
            if last > duration_ms {
                return Err(ConfigError::new(
                    p("time_s"),
                    "creation times must fall within the duration",
                ));
            }
            traffic.push(Traffic {
                source: t.source,
                destination,
                size: t.size,
                time_ms,
                lifetime_s: t.lifetime_s,
                suite,
                coverage,
                count: t.count,
                interval_ms,
                age_block: t.age_block,
            });
        }

        check_routes_acyclic(&nodes, &traffic)?;

        Ok(Scenario {
            name: self.name,
            seed: self.seed,
            epoch_s: self.epoch_s,
            duration_ms,
            nodes,
            contacts,
            faults,
            tamper,
            traffic,
        })
    }
}

/// Following next hops towards any traffic destination must never revisit
/// a node.
fn check_routes_acyclic(nodes: &[NodeConfig], traffic: &[Traffic]) -> Result<(), ConfigError> {
    let by_id: BTreeMap<&str, (usize, &NodeConfig)> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.node_id.as_str(), (i, n)))
        .collect();
    let destinations: BTreeSet<&str> = traffic
        .iter()
        .filter_map(|t| t.destination.node())
        .collect();
    for dest in destinations {
        for start in nodes {
            let mut seen = BTreeSet::new();
            let mut at = start.node_id.as_str();
            while at != dest {
                let (idx, node) = match by_id.get(at) {
                    Some(v) => *v,
                    None => break,
                };
                if !seen.insert(at) {
                    return Err(ConfigError::new(
                        format!("nodes[{idx}].routes.{dest}"),
                        format!("routing loop towards {dest:?} through {at:?}"),
                    ));
                }
                match node.next_hop(dest) {
                    Some(hop) => at = hop,
                    None => break,
                }
            }
        }
    }
    Ok(())
}

pub fn parse_scenario(text: &str) -> Result<Scenario, HarnessError> {
    let file: ScenarioFile =
        serde_json::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
    file.validate().map_err(HarnessError::Validation)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    parse_scenario(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_NODE: &str = r#"{
        "name": "two", "seed": 7, "duration_s": 100,
        "nodes": [
            {"node_id": "a", "routes": {"b": "b"}},
            {"node_id": "b"}
        ],
        "contacts": [{"from": "a", "to": "b", "open_s": 0, "close_s": 50, "delay_s": 0.5}],
        "traffic": [{"source": "a", "destination": "dtn:b/sink", "size": 10, "time_s": 1, "lifetime_s": 60}]
    }"#;

    fn expect_path(text: &str, path: &str) {
        match parse_scenario(text) {
            Err(HarnessError::Validation(e)) => assert_eq!(e.path, path, "{e}"),
            other => panic!("expected validation error at {path}, got {other:?}"),
        }
    }

    #[test]
    fn loads_two_node_file() {
        let s = parse_scenario(TWO_NODE).unwrap();
        assert_eq!(s.contacts.len(), 1);
        assert_eq!(s.contacts[0].delay_ms, 500);
        assert_eq!(s.epoch_s, DEFAULT_EPOCH_S);
        assert_eq!(s.traffic[0].coverage, Coverage::BOTH);
        assert_eq!(s.traffic[0].suite, None);
        let again = s.to_file().validate().unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn rejects_empty_contact_window() {
        expect_path(
            &TWO_NODE.replace(r#""close_s": 50"#, r#""close_s": 0"#),
            "contacts[0].close_s",
        );
    }

    #[test]
    fn rejects_unknown_policy_mode() {
        let text = TWO_NODE.replace(
            r#"{"node_id": "b"}"#,
            r#"{"node_id": "b", "policy": {"mode": "paranoid"}}"#,
        );
        expect_path(&text, "nodes[1].policy.mode");
    }

    #[test]
    fn rejects_bad_fields() {
        expect_path(
            &TWO_NODE.replace(r#""to": "b", "open_s""#, r#""to": "z", "open_s""#),
            "contacts[0].to",
        );
        expect_path(
            &TWO_NODE.replace(r#""time_s": 1"#, r#""time_s": 101"#),
            "traffic[0].time_s",
        );
        expect_path(
            &TWO_NODE.replace(r#""lifetime_s": 60"#, r#""lifetime_s": 60, "suite": 3"#),
            "traffic[0].suite",
        );
        expect_path(
            &TWO_NODE.replace(r#""lifetime_s": 60"#, r#""lifetime_s": 60, "suite": 2"#),
            "traffic[0].suite",
        );
        expect_path(
            &TWO_NODE.replace(
                r#""lifetime_s": 60"#,
                r#""lifetime_s": 60, "coverage": "all""#,
            ),
            "traffic[0].coverage",
        );
        expect_path(
            &TWO_NODE.replace("dtn:b/sink", "dtn:none"),
            "traffic[0].destination",
        );
        expect_path(
            &TWO_NODE.replace(
                r#""seed": 7,"#,
                r#""seed": 7, "faults": [{"from": "a", "to": "b", "transit_ber": 1.5}],"#,
            ),
            "faults[0].transit_ber",
        );
        expect_path(
            &TWO_NODE.replace(
                r#""seed": 7,"#,
                r#""seed": 7, "faults": [{"from": "b", "to": "a"}],"#,
            ),
            "faults[0].to",
        );
    }

    #[test]
    fn rejects_routing_loop() {
        let text = TWO_NODE
            .replace(
                r#"{"node_id": "b"}"#,
                r#"{"node_id": "b", "routes": {"c": "a"}}, {"node_id": "c"}"#,
            )
            .replace(r#"{"b": "b"}"#, r#"{"b": "b", "c": "b"}"#)
            .replace("dtn:b/sink", "dtn:c/sink");
        match parse_scenario(&text) {
            Err(HarnessError::Validation(e)) => assert!(e.message.contains("loop"), "{e}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_are_distinct() {
        assert!(matches!(parse_scenario("{"), Err(HarnessError::Parse(_))));
        assert!(matches!(
            parse_scenario(r#"{"duration_s": 1, "nodes": [], "bogus": 1}"#),
            Err(HarnessError::Parse(_))
        ));
    }
}
