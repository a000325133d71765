//! Discrete-event simulator.
//!
//! Time is integer milliseconds of true time, starting at zero at the
//! scenario epoch. Events at equal times run in insertion order. Agents
//! only ever see their own clock; the simulator keeps ground-truth copies
//! of every originated payload to classify deliveries.
//!
//! Fault streams are keyed per (link, bundle): the generator for a bundle
//! crossing a link depends only on the scenario seed, the link index and
//! the bundle's traffic ordinal. Two runs that differ only in protection
//! policy therefore see identical errors on every bundle they both carry.

use std::collections::{BTreeMap, HashMap};

use rand::RngCore;

use crate::agent::{Agent, Disposition, Protection};
use crate::channel::{self, ConvergenceLayer, FaultModel, SimLink};
use crate::model::Bundle;
use crate::wire;

use super::metrics::{EventTrace, Metrics, NodeMetrics, Outcome};
use super::scenario::Scenario;

const STORAGE_STREAM: u64 = 0x5354_4f52_0000_0000;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub scenario: String,
    pub trace: EventTrace,
    pub metrics: Metrics,
    pub nodes: Vec<NodeMetrics>,
    /// Bundles whose final state the harness recorded, by tag.
    pub outcomes: BTreeMap<u64, Outcome>,
    /// Tags whose payload differed from ground truth when their journey
    /// ended (decode failures excluded).
    pub payload_corrupted: BTreeMap<u64, bool>,
}

#[derive(Debug)]
enum Event {
    ContactOpen {
        contact: usize,
    },
    Create {
        traffic: usize,
        copy: u32,
        tag: u64,
    },
    Arrive {
        node: usize,
        tag: u64,
        bytes: Vec<u8>,
    },
}

struct Truth {
    payload: Vec<u8>,
    destination: String,
}

struct Link {
    from: usize,
    to: usize,
    cla: SimLink,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    epoch_ms: i64,
    agents: Vec<Agent>,
    node_index: HashMap<String, usize>,
    links: Vec<Link>,
    link_index: HashMap<(usize, usize), usize>,
    queue: BTreeMap<(i64, u64), Event>,
    next_seq: u64,
    trace: EventTrace,
    metrics: Metrics,
    per_node: Vec<Metrics>,
    truth: HashMap<u64, Truth>,
    outcomes: BTreeMap<u64, Outcome>,
    payload_corrupted: BTreeMap<u64, bool>,
    dispatch_cycles: Vec<u64>,
    in_flight: u64,
}

fn label(tag: u64) -> String {
    format!("b{tag}")
}

/// Deterministic payload for a traffic bundle.
pub fn payload_for(seed: u64, tag: u64, size: usize) -> Vec<u8> {
    let mut rng = channel::seeded_rng(channel::derive_seed(seed ^ 0x5041_594c_4f41_4400, tag));
    let mut out = vec![0u8; size];
    rng.fill_bytes(&mut out);
    out
}

fn bit_distance(a: &[u8], b: &[u8]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

impl<'a> Sim<'a> {
    fn new(scenario: &'a Scenario) -> Self {
        let epoch_ms = scenario.epoch_s as i64 * 1000;
        let node_index: HashMap<String, usize> = scenario
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.node_id.clone(), i))
            .collect();
        let mut agents: Vec<Agent> = scenario
            .nodes
            .iter()
            .map(|n| Agent::new(n.clone(), epoch_ms))
            .collect();
        for rule in &scenario.tamper {
            agents[node_index[&rule.node]].set_tamper(Some(rule.mutation.clone()));
        }

        let mut links = Vec::new();
        let mut link_index = HashMap::new();
        for c in &scenario.contacts {
            let key = (node_index[&c.from], node_index[&c.to]);
            if link_index.contains_key(&key) {
                continue;
            }
            let idx = links.len();
            let fault = scenario
                .faults
                .iter()
                .find(|f| f.from == c.from && f.to == c.to);
            let rng_seed = fault
                .and_then(|f| f.rng_seed)
                .unwrap_or_else(|| channel::derive_seed(scenario.seed, idx as u64));
            let model = match fault {
                Some(f) => FaultModel {
                    transit_ber: f.transit_ber,
                    storage_corrupt_prob: f.storage_corrupt_prob,
                    storage_flip_bits: f.storage_flip_bits,
                    rng_seed,
                },
                None => FaultModel::clean(rng_seed),
            };
            link_index.insert(key, idx);
            links.push(Link {
                from: key.0,
                to: key.1,
                cla: SimLink::new(model),
            });
        }

        let n = scenario.nodes.len();
        Sim {
            scenario,
            epoch_ms,
            agents,
            node_index,
            links,
            link_index,
            queue: BTreeMap::new(),
            next_seq: 0,
            trace: EventTrace::default(),
            metrics: Metrics::default(),
            per_node: vec![Metrics::default(); n],
            truth: HashMap::new(),
            outcomes: BTreeMap::new(),
            payload_corrupted: BTreeMap::new(),
            dispatch_cycles: vec![0; n],
            in_flight: 0,
        }
    }

    fn schedule(&mut self, t_ms: i64, event: Event) {
        self.queue.insert((t_ms, self.next_seq), event);
        self.next_seq += 1;
    }

    fn node_name(&self, node: usize) -> &'a str {
        &self.scenario.nodes[node].node_id
    }

    fn log(&mut self, t_ms: i64, node: usize, event: &str, tag: u64, detail: String) {
        let name = self.node_name(node);
        self.trace.push(t_ms, name, event, label(tag), detail);
    }

    fn finish(&mut self, t_ms: i64, node: usize, tag: u64, outcome: Outcome, detail: String) {
        let event = match outcome {
            Outcome::DeliveredClean => "delivered",
            Outcome::DeliveredCorruptUndetected => "delivered_corrupt_undetected",
            Outcome::DroppedDecodeError => "dropped_decode_error",
            Outcome::Dropped(d) => d.as_str(),
        };
        self.log(t_ms, node, event, tag, detail);
        self.metrics.record(outcome);
        self.per_node[node].record(outcome);
        self.outcomes.insert(tag, outcome);
    }

    fn payload_intact(&self, tag: u64, bundle: &Bundle) -> bool {
        self.truth
            .get(&tag)
            .is_some_and(|t| t.payload == bundle.payload)
    }

    fn open_contact(&self, from: usize, to: usize, t_ms: i64) -> Option<usize> {
        let (from, to) = (self.node_name(from), self.node_name(to));
        self.scenario
            .contacts
            .iter()
            .enumerate()
            .filter(|(_, c)| c.from == from && c.to == to && c.is_open(t_ms))
            .min_by_key(|(i, c)| (c.close_ms, *i))
            .map(|(i, _)| i)
    }

    fn run(mut self) -> RunOutput {
        for (i, c) in self.scenario.contacts.iter().enumerate() {
            if c.open_ms <= self.scenario.duration_ms {
                self.schedule(c.open_ms, Event::ContactOpen { contact: i });
            }
        }
        let mut tag = 0u64;
        for (i, t) in self.scenario.traffic.iter().enumerate() {
            for copy in 0..t.count {
                self.schedule(
                    t.time_ms + t.interval_ms * i64::from(copy),
                    Event::Create {
                        traffic: i,
                        copy,
                        tag,
                    },
                );
                tag += 1;
            }
        }

        while let Some(entry) = self.queue.first_entry() {
            let t_ms = entry.key().0;
            if t_ms > self.scenario.duration_ms {
                break;
            }
            let event = entry.remove();
            match event {
                Event::ContactOpen { contact } => {
                    let c = &self.scenario.contacts[contact];
                    let from = self.node_index[&c.from];
                    self.dispatch(from, t_ms);
                }
                Event::Create { traffic, copy, tag } => self.create(traffic, copy, tag, t_ms),
                Event::Arrive { node, tag, bytes } => {
                    self.in_flight -= 1;
                    self.arrive(node, tag, &bytes, t_ms);
                }
            }
        }

        let in_flight_left = self
            .queue
            .values()
            .filter(|e| matches!(e, Event::Arrive { .. }))
            .count() as u64;
        debug_assert_eq!(in_flight_left, self.in_flight);
        let mut stored_total = 0;
        for (i, agent) in self.agents.iter().enumerate() {
            let held = agent.stored().len() as u64;
            self.per_node[i].still_queued = held;
            stored_total += held;
        }
        self.metrics.still_queued = stored_total + self.in_flight;
        assert!(
            self.metrics.conservation_holds(),
            "metrics do not balance: {:?}",
            self.metrics
        );

        let nodes = self
            .scenario
            .nodes
            .iter()
            .zip(&self.per_node)
            .map(|(n, m)| NodeMetrics {
                node: n.node_id.clone(),
                counts: *m,
            })
            .collect();
        RunOutput {
            scenario: self.scenario.name.clone(),
            trace: self.trace,
            metrics: self.metrics,
            nodes,
            outcomes: self.outcomes,
            payload_corrupted: self.payload_corrupted,
        }
    }

    fn create(&mut self, traffic: usize, copy: u32, tag: u64, t_ms: i64) {
        let t = &self.scenario.traffic[traffic];
        let node = self.node_index[&t.source];
        let payload = payload_for(self.scenario.seed, tag, t.size);
        let protection = t.suite.map(|suite| Protection {
            suite,
            coverage: t.coverage,
        });
        let result = self.agents[node].originate(
            tag,
            "src",
            t.destination.clone(),
            t.lifetime_s,
            payload.clone(),
            protection,
            t.age_block,
            self.epoch_ms + t_ms,
        );
        let (bundle, disposition) =
            result.expect("scenario validation guarantees originate succeeds");
        self.truth.insert(
            tag,
            Truth {
                payload,
                destination: t.destination.node().expect("validated").to_string(),
            },
        );
        self.metrics.created += 1;
        self.per_node[node].created += 1;
        self.log(
            t_ms,
            node,
            "created",
            tag,
            format!(
                "traffic={traffic} copy={copy} id={} dst={} size={} lifetime={} age_block={} suite={}",
                bundle.id(),
                bundle.destination,
                bundle.payload.len(),
                bundle.lifetime,
                bundle.age_ms.is_some(),
                bundle.integrity.as_ref().map_or(0, |b| b.suite().code()),
            ),
        );
        match disposition {
            Disposition::Delivered => {
                self.finish(t_ms, node, tag, Outcome::DeliveredClean, "local".into())
            }
            Disposition::Queued => {
                self.log(t_ms, node, "queued", tag, String::new());
                self.dispatch(node, t_ms);
            }
            d => self.finish(t_ms, node, tag, Outcome::Dropped(d), String::new()),
        }
    }

    fn arrive(&mut self, node: usize, tag: u64, bytes: &[u8], t_ms: i64) {
        let bundle = match wire::decode_bundle(bytes) {
            Ok(b) => b,
            Err(e) => {
                self.finish(t_ms, node, tag, Outcome::DroppedDecodeError, e.to_string());
                return;
            }
        };
        let intact = self.payload_intact(tag, &bundle);
        let receipt = self.agents[node].receive(tag, &bundle, self.epoch_ms + t_ms);
        let verdict = receipt
            .verdict
            .map_or("none".to_string(), |v| format!("{v:?}").to_lowercase());
        let detail = format!(
            "local_now={} verdict={verdict} payload_intact={intact}",
            receipt.local_now
        );
        match receipt.disposition {
            Disposition::Delivered => {
                let here = self.node_name(node);
                let right_place = self.truth.get(&tag).is_some_and(|t| t.destination == here);
                self.payload_corrupted.insert(tag, !intact);
                let outcome = if intact && right_place {
                    Outcome::DeliveredClean
                } else {
                    Outcome::DeliveredCorruptUndetected
                };
                self.finish(t_ms, node, tag, outcome, detail);
            }
            Disposition::Queued => {
                self.log(t_ms, node, "queued", tag, detail);
                self.dispatch(node, t_ms);
            }
            d => {
                self.payload_corrupted.insert(tag, !intact);
                self.finish(t_ms, node, tag, Outcome::Dropped(d), detail);
            }
        }
    }

    fn storage_faults(&mut self, node: usize, t_ms: i64) {
        let cycle = self.dispatch_cycles[node];
        self.dispatch_cycles[node] += 1;
        let mut lost = Vec::new();
        let mut corrupted = Vec::new();
        let stored = std::mem::take(self.agents[node].stored_mut());
        let mut keep = Vec::with_capacity(stored.len());
        for mut s in stored {
            let hop = s
                .bundle
                .destination
                .node()
                .and_then(|d| self.agents[node].config().next_hop(d))
                .and_then(|h| self.node_index.get(h).copied());
            let model = hop
                .and_then(|h| self.link_index.get(&(node, h)))
                .map(|&l| self.links[l].cla.model())
                .filter(|m| m.storage_corrupt_prob > 0.0);
            let Some(model) = model else {
                keep.push(s);
                continue;
            };
            let key = channel::derive_seed(s.tag, STORAGE_STREAM ^ cycle);
            let mut rng = channel::seeded_rng(channel::derive_seed(model.rng_seed, key));
            let mut image = wire::encode_bundle(&s.bundle);
            let flips = channel::corrupt_storage_in_place(&mut image, model, &mut rng);
            if flips == 0 {
                keep.push(s);
                continue;
            }
            match wire::decode_bundle(&image) {
                Ok(b) => {
                    corrupted.push((s.tag, flips));
                    s.bundle = b;
                    keep.push(s);
                }
                Err(e) => lost.push((s.tag, e.to_string())),
            }
        }
        *self.agents[node].stored_mut() = keep;
        for (tag, flips) in corrupted {
            self.log(
                t_ms,
                node,
                "storage_corrupted",
                tag,
                format!("flips={flips}"),
            );
        }
        for (tag, err) in lost {
            self.finish(
                t_ms,
                node,
                tag,
                Outcome::DroppedDecodeError,
                format!("in storage: {err}"),
            );
        }
    }

    fn dispatch(&mut self, node: usize, t_ms: i64) {
        self.storage_faults(node, t_ms);
        let open: Vec<bool> = (0..self.agents.len())
            .map(|to| self.open_contact(node, to, t_ms).is_some())
            .collect();
        let node_index = &self.node_index;
        let outcome = self.agents[node].dispatch(self.epoch_ms + t_ms, |hop| {
            node_index.get(hop).is_some_and(|&i| open[i])
        });

        for d in outcome.dropped {
            self.payload_corrupted
                .insert(d.tag, !self.payload_intact(d.tag, &d.bundle));
            let detail = format!("at dispatch age_ms={:?}", d.bundle.age_ms);
            self.finish(t_ms, node, d.tag, Outcome::Dropped(d.disposition), detail);
        }
        for tx in outcome.sent {
            let to = self.node_index[&tx.next_hop];
            let contact = self
                .open_contact(node, to, t_ms)
                .expect("dispatch only uses open contacts");
            let delay = self.scenario.contacts[contact].delay_ms;
            if let Some(m) = &tx.mutation {
                let detail = match m {
                    Ok(desc) => desc.clone(),
                    Err(e) => format!("skipped: {e}"),
                };
                self.log(t_ms, node, "mutated", tx.tag, detail);
            }
            let image = wire::encode_bundle(&tx.bundle);
            let link = &mut self.links[self.link_index[&(node, to)]];
            debug_assert_eq!((link.from, link.to), (node, to));
            link.cla
                .send_keyed(&image, tx.tag)
                .expect("simulated link accepts bundle images");
            let received = link.cla.recv().expect("frame just queued");
            let flips = bit_distance(&image, &received);
            let payload_start = wire::payload_offset(image.len(), tx.bundle.payload.len());
            let payload_flips = bit_distance(&image[payload_start..], &received[payload_start..]);
            self.log(
                t_ms,
                node,
                "forwarded",
                tx.tag,
                format!(
                    "to={} bytes={} flips={flips} payload_flips={payload_flips}",
                    tx.next_hop,
                    image.len()
                ),
            );
            self.in_flight += 1;
            self.schedule(
                t_ms + delay,
                Event::Arrive {
                    node: to,
                    tag: tx.tag,
                    bytes: received,
                },
            );
        }
    }
}

/// Runs a validated scenario to completion.
pub fn run(scenario: &Scenario) -> RunOutput {
    Sim::new(scenario).run()
}
