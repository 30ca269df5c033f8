//! File formats: matrix fixtures, tiling tables, request traces, metrics,
//! fusion specs and plans, and model manifests.

pub mod fixtures;
pub mod fusion_file;
pub mod matrix_file;
pub mod metrics_file;
pub mod table_file;
pub mod trace_file;

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: u64, msg: String },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn format(path: &Path, msg: impl ToString) -> Self {
        IoError::Format { path: path.to_path_buf(), msg: msg.to_string() }
    }

    pub(crate) fn json(path: &Path, e: serde_json::Error) -> Self {
        if e.is_io() {
            return IoError::io(path, e.into());
        }
        IoError::Parse { path: path.to_path_buf(), line: e.line() as u64, msg: e.to_string() }
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::json(path, e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::json(path, e))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

/// Nanoseconds rendered as milliseconds with six decimals (exact).
pub fn fmt_ms(d: std::time::Duration) -> String {
    let ns = d.as_nanos();
    format!("{}.{:06}", ns / 1_000_000, ns % 1_000_000)
}

/// Parses a decimal millisecond value back to a whole number of ns.
pub fn parse_ms(s: &str) -> Option<std::time::Duration> {
    let s = s.trim();
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty()
        || frac.len() > 6
        || !int.bytes().all(|b| b.is_ascii_digit())
        || !frac.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    let ms: u64 = int.parse().ok()?;
    let frac_ns: u64 = if frac.is_empty() { 0 } else { format!("{frac:0<6}").parse().ok()? };
    Some(std::time::Duration::from_nanos(ms.checked_mul(1_000_000)?.checked_add(frac_ns)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::time::Duration;

    #[test]
    fn ms_format_examples() {
        assert_eq!(fmt_ms(Duration::from_nanos(1_234_567_891)), "1234.567891");
        assert_eq!(fmt_ms(Duration::ZERO), "0.000000");
        assert_eq!(parse_ms("12.5"), Some(Duration::from_micros(12_500)));
        assert_eq!(parse_ms("7"), Some(Duration::from_millis(7)));
        assert_eq!(parse_ms("-1"), None);
        assert_eq!(parse_ms("1.0000001"), None);
        assert_eq!(parse_ms("x"), None);
    }

    proptest! {
        #[test]
        fn ms_round_trip(ns in 0u64..1u64 << 50) {
            let d = Duration::from_nanos(ns);
            prop_assert_eq!(parse_ms(&fmt_ms(d)), Some(d));
        }
    }
}
