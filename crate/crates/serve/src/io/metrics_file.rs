//! Serving results: per-request CSV, mode timeline CSV and a JSON summary.

use std::path::Path;
use std::time::Duration;

use lora_serve_core::orchestrator::Metrics;
use serde::{Deserialize, Serialize};

use super::{fmt_ms, parse_ms, write_file, write_json, IoError};

pub const REQUESTS_HEADER: [&str; 9] =
    ["id", "adapter", "arrival_ms", "start_ms", "finish_ms", "rounds", "input_tokens", "output_tokens", "e2e_ms"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub merged: f64,
    pub unmerged: f64,
    pub mixture: f64,
    pub switching: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub avg_token_latency_ms: f64,
    pub throughput_rps: f64,
    pub switches: usize,
    pub switch_time_ms: f64,
    pub mode_occupancy: Occupancy,
    pub budget_violations: usize,
    pub requests: usize,
    pub unserved: usize,
    pub rounds: usize,
    pub max_round_ms: f64,
    pub max_switch_ms: f64,
    pub max_wait_ms: f64,
    pub max_wait_excess_ms: f64,
    pub starvation_overflows: usize,
    pub adapter_loads: usize,
    pub merged_bypass_macs: u64,
    pub total_macs: u64,
}

fn ms(d: Duration) -> f64 {
    d.as_nanos() as f64 / 1e6
}

impl Summary {
    pub fn from_metrics(m: &Metrics) -> Self {
        let [merged, unmerged, mixture, switching] = m.occupancy.fractions();
        Summary {
            avg_token_latency_ms: m.avg_token_latency_ms(),
            throughput_rps: m.throughput_rps(),
            switches: m.switches,
            switch_time_ms: ms(m.switch_time),
            mode_occupancy: Occupancy { merged, unmerged, mixture, switching },
            budget_violations: m.budget_violations,
            requests: m.requests.len(),
            unserved: m.unserved,
            rounds: m.rounds,
            max_round_ms: ms(m.max_round),
            max_switch_ms: ms(m.max_switch),
            max_wait_ms: ms(m.max_wait()),
            max_wait_excess_ms: ms(m.max_wait_excess()),
            starvation_overflows: m.starvation_overflows,
            adapter_loads: m.adapter_loads,
            merged_bypass_macs: m.merged_bypass_macs,
            total_macs: m.macs.total(),
        }
    }
}

pub fn requests_csv(m: &Metrics) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REQUESTS_HEADER).expect("in-memory write");
    for r in &m.requests {
        w.write_record([
            r.id.to_string(),
            r.adapter.0.to_string(),
            fmt_ms(r.arrival),
            fmt_ms(r.start),
            fmt_ms(r.finish),
            r.rounds.to_string(),
            r.input_tokens.to_string(),
            r.output_tokens.to_string(),
            fmt_ms(r.e2e()),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn timeline_csv(m: &Metrics) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["start_ms", "end_ms", "mode", "adapter", "switching"]).expect("in-memory write");
    for s in &m.timeline {
        let adapter = s.mode.merged_adapter().map(|a| a.0.to_string()).unwrap_or_default();
        w.write_record([fmt_ms(s.start), fmt_ms(s.end), s.mode.kind().into(), adapter, s.switching.to_string()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Writes `requests.csv`, `timeline.csv` and `summary.json` into `dir`.
pub fn write_metrics(dir: &Path, m: &Metrics) -> Result<Summary, IoError> {
    let summary = Summary::from_metrics(m);
    write_file(&dir.join("requests.csv"), &requests_csv(m))?;
    write_file(&dir.join("timeline.csv"), &timeline_csv(m))?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// One row of `requests.csv` as read back from disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestRow {
    pub id: u64,
    pub adapter: u32,
    pub arrival: Duration,
    pub start: Duration,
    pub finish: Duration,
    pub rounds: usize,
    pub input_tokens: usize,
    pub output_tokens: usize,
    pub e2e: Duration,
}

pub fn read_requests_csv(path: &Path) -> Result<Vec<RequestRow>, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let err = |line: u64, msg: String| IoError::Parse { path: path.to_path_buf(), line, msg };
    let header = rdr.headers().map_err(|e| err(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != REQUESTS_HEADER {
        return Err(err(1, format!("expected header {}", REQUESTS_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let f = |i: usize| rec.get(i).unwrap_or("");
        let int = |i: usize| f(i).parse::<u64>().map_err(|e| err(line, format!("{}: {e}", REQUESTS_HEADER[i])));
        let time = |i: usize| parse_ms(f(i)).ok_or_else(|| err(line, format!("{}: bad value", REQUESTS_HEADER[i])));
        out.push(RequestRow {
            id: int(0)?,
            adapter: int(1)? as u32,
            arrival: time(2)?,
            start: time(3)?,
            finish: time(4)?,
            rounds: int(5)? as usize,
            input_tokens: int(6)? as usize,
            output_tokens: int(7)? as usize,
            e2e: time(8)?,
        });
    }
    Ok(out)
}

/// Σ e2e / Σ tokens in ms, recomputed from CSV rows.
pub fn avg_token_latency_from_rows(rows: &[RequestRow]) -> f64 {
    let tokens: usize = rows.iter().map(|r| r.input_tokens + r.output_tokens).sum();
    if tokens == 0 {
        return 0.0;
    }
    let ns: u128 = rows.iter().map(|r| r.e2e.as_nanos()).sum();
    ns as f64 / tokens as f64 / 1e6
}
