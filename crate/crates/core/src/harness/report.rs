use std::fmt::Write as _;

use serde::Serialize;

use super::metrics::{Metrics, NodeMetrics};
use super::sim::RunOutput;
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(HarnessError::Parse(format!(
                "unknown report format {other:?}"
            ))),
        }
    }
}

/// Stable JSON report schema, version 1.
#[derive(Debug, Serialize)]
pub struct JsonReport<'a> {
    pub schema: u32,
    pub scenario: &'a str,
    pub metrics: &'a Metrics,
    pub conservation_holds: bool,
    pub drops_total: u64,
    pub nodes: &'a [NodeMetrics],
    pub trace_records: usize,
}

const NODE_COLUMNS: [&str; 9] = [
    "created",
    "delivered_clean",
    "delivered_corrupt_undetected",
    "dropped_expired",
    "dropped_invalid_timestamp",
    "dropped_integrity",
    "dropped_decode_error",
    "dropped_storage_full",
    "still_queued",
];

pub fn report(run: &RunOutput, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => text(run),
        ReportFormat::Json => json(run),
        ReportFormat::Csv => csv(run),
    }
}

fn text(run: &RunOutput) -> String {
    let m = &run.metrics;
    let mut out = String::new();
    let _ = writeln!(out, "scenario: {}", run.scenario);
    let _ = writeln!(out, "{:<30} {:>10}", "metric", "count");
    for (name, value) in m.fields() {
        let _ = writeln!(out, "{name:<30} {value:>10}");
    }
    let _ = writeln!(out, "{:<30} {:>10}", "drops_total", m.drops());
    let _ = writeln!(
        out,
        "conservation: {}",
        if m.conservation_holds() {
            "ok"
        } else {
            "VIOLATED"
        }
    );
    out.push('\n');
    let _ = write!(out, "{:<8}", "node");
    for c in NODE_COLUMNS {
        let _ = write!(out, " {:>w$}", short(c), w = short(c).len().max(6));
    }
    out.push('\n');
    for n in &run.nodes {
        let _ = write!(out, "{:<8}", n.node);
        for (c, (_, v)) in NODE_COLUMNS.iter().zip(n.counts.fields()) {
            let _ = write!(out, " {:>w$}", v, w = short(c).len().max(6));
        }
        out.push('\n');
    }
    out
}

fn short(column: &str) -> &str {
    match column {
        "delivered_clean" => "clean",
        "delivered_corrupt_undetected" => "corrupt",
        "dropped_expired" => "expired",
        "dropped_invalid_timestamp" => "future_ts",
        "dropped_integrity" => "integrity",
        "dropped_decode_error" => "decode",
        "dropped_storage_full" => "full",
        "still_queued" => "queued",
        other => other,
    }
}

fn json(run: &RunOutput) -> String {
    let report = JsonReport {
        schema: 1,
        scenario: &run.scenario,
        metrics: &run.metrics,
        conservation_holds: run.metrics.conservation_holds(),
        drops_total: run.metrics.drops(),
        nodes: &run.nodes,
        trace_records: run.trace.len(),
    };
    serde_json::to_string_pretty(&report).expect("report serializes")
}

fn csv(run: &RunOutput) -> String {
    let mut out = String::from("node");
    for c in NODE_COLUMNS {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for n in &run.nodes {
        out.push_str(&n.node);
        for (_, v) in n.counts.fields() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}
