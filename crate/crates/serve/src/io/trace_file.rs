//! Request trace CSV. Columns: `arrival_ms, request_id, adapter_id,
//! input_tokens, output_tokens, head_kind, budget_ms` (budget may be empty).

use std::path::Path;

use lora_serve_core::lora::{AdapterId, HeadKind};
use lora_serve_core::orchestrator::Request;

use super::{fmt_ms, parse_ms, write_file, IoError};

pub const TRACE_HEADER: [&str; 7] =
    ["arrival_ms", "request_id", "adapter_id", "input_tokens", "output_tokens", "head_kind", "budget_ms"];

pub fn trace_to_csv(trace: &[Request]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER).expect("in-memory write");
    for r in trace {
        let budget = r.latency_budget.map(fmt_ms).unwrap_or_default();
        w.write_record([
            fmt_ms(r.arrival),
            r.id.to_string(),
            r.adapter.0.to_string(),
            r.input_len.to_string(),
            r.output_len.to_string(),
            r.head.as_str().to_string(),
            budget,
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn parse_head(s: &str) -> Option<HeadKind> {
    match s {
        "lm" => Some(HeadKind::Lm),
        "task" => Some(HeadKind::Task),
        _ => None,
    }
}

/// Parses a trace. Errors carry the 1-based line number of the offending
/// row (the header is line 1).
pub fn trace_from_csv(bytes: &[u8], path: &Path) -> Result<Vec<Request>, IoError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(bytes);
    let err = |line: u64, msg: String| IoError::Parse { path: path.to_path_buf(), line, msg };
    let header = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != TRACE_HEADER {
        return Err(err(1, format!("expected header {}", TRACE_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<u64, IoError> {
            field(i).parse::<u64>().map_err(|e| err(line, format!("{}: {e}", TRACE_HEADER[i])))
        };
        let arrival = parse_ms(field(0)).ok_or_else(|| err(line, format!("arrival_ms: bad value {:?}", field(0))))?;
        let id = num(1)?;
        let adapter = u32::try_from(num(2)?).map_err(|e| err(line, format!("adapter_id: {e}")))?;
        let input = num(3)? as usize;
        let output = num(4)? as usize;
        if input == 0 || output == 0 {
            return Err(err(line, "token counts must be positive".into()));
        }
        let head = parse_head(field(5))
            .ok_or_else(|| err(line, format!("head_kind: expected lm or task, got {:?}", field(5))))?;
        let budget = match field(6) {
            "" => None,
            s => Some(parse_ms(s).ok_or_else(|| err(line, format!("budget_ms: bad value {s:?}")))?),
        };
        out.push(Request::new(id, AdapterId(adapter), arrival, input, output, head).with_budget(budget));
    }
    Ok(out)
}

pub fn save_trace(path: &Path, trace: &[Request]) -> Result<(), IoError> {
    write_file(path, &trace_to_csv(trace))
}

pub fn load_trace(path: &Path) -> Result<Vec<Request>, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    trace_from_csv(&bytes, path)
}
