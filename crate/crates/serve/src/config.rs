//! Run configuration file (JSON). Every field is optional; command-line
//! flags take precedence over the file, which takes precedence over the
//! built-in defaults.

use std::path::{Path, PathBuf};
use std::time::Duration;

use lora_serve_core::lora::HeadKind;
use lora_serve_core::workload::{AppProfile, LenDist};
use serde::{Deserialize, Serialize};

use crate::io::trace_file::parse_head;
use crate::io::{read_json, IoError};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub layers: Option<usize>,
    pub hidden: Option<usize>,
    pub vocab: Option<usize>,
    pub ranks: Option<Vec<usize>>,
    pub adapters: Option<u32>,
    pub task_classes: Option<usize>,
    pub max_bs: Option<usize>,
    pub theta_ms: Option<f64>,
    pub theta_multiple: Option<f64>,
    pub ewma_alpha: Option<f64>,
    pub tiling_table: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub mode: Option<String>,
    pub cache_capacity: Option<usize>,
    pub load_ms: Option<f64>,
    pub seed: Option<u64>,
    pub workload: Option<WorkloadFile>,
    pub tune: Option<TuneFile>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadFile {
    pub duration_s: Option<f64>,
    pub rate: Option<f64>,
    pub arrival: Option<String>,
    pub skewness: Option<f64>,
    pub profiles: Vec<ProfileFile>,
    pub seed: Option<u64>,
}

/// A named built-in profile (`video`, `vqa`) or a custom one; explicit
/// fields override the built-in values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFile {
    pub name: String,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default)]
    pub input: Option<[usize; 2]>,
    #[serde(default)]
    pub output: Option<[usize; 2]>,
    #[serde(default)]
    pub head: Option<String>,
    #[serde(default)]
    pub budget_ms: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneFile {
    pub cache_kib: Option<usize>,
    pub trials: Option<usize>,
    pub m_values: Option<Vec<usize>>,
    pub max_candidates: Option<usize>,
    pub shapes: Option<Vec<String>>,
}

pub fn load_config(path: &Path) -> Result<RunConfig, IoError> {
    read_json(path)
}

fn dist([lo, hi]: [usize; 2]) -> LenDist {
    if lo == hi {
        LenDist::Fixed(lo)
    } else {
        LenDist::Uniform { lo, hi }
    }
}

fn ms(v: f64) -> Result<Duration, String> {
    Duration::try_from_secs_f64(v / 1e3).map_err(|_| format!("invalid duration {v} ms"))
}

impl ProfileFile {
    pub fn to_profile(&self) -> Result<AppProfile, String> {
        let mut p = AppProfile::by_name(&self.name).unwrap_or_else(|| AppProfile {
            name: self.name.clone(),
            input_len: LenDist::Fixed(0),
            output_len: LenDist::Fixed(0),
            head: HeadKind::Lm,
            latency_budget: None,
        });
        if let Some(i) = self.input {
            p.input_len = dist(i);
        }
        if let Some(o) = self.output {
            p.output_len = dist(o);
        }
        if let Some(h) = &self.head {
            p.head = parse_head(h).ok_or_else(|| format!("profile {}: head must be lm or task", self.name))?;
        }
        if let Some(b) = self.budget_ms {
            p.latency_budget = Some(ms(b)?);
        }
        if p.input_len == LenDist::Fixed(0) || p.output_len == LenDist::Fixed(0) {
            return Err(format!("profile {}: custom profiles need input and output ranges", self.name));
        }
        Ok(p)
    }
}

pub fn parse_duration_ms(v: f64) -> Result<Duration, String> {
    ms(v)
}

/// Parses `MxKxN`.
pub fn parse_shape(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    if parts.len() != 3 {
        return Err(format!("shape {s:?}: expected MxKxN"));
    }
    let p = |t: &str| {
        t.trim().parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(|| format!("shape {s:?}: bad dimension {t:?}"))
    };
    Ok((p(parts[0])?, p(parts[1])?, p(parts[2])?))
}
