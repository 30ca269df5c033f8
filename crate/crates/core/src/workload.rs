//! Synthetic request traces: arrival process, adapter skew and
//! application token profiles.

use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lora::{AdapterId, HeadKind};
use crate::orchestrator::Request;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkloadError {
    #[error("rate must be positive and finite")]
    Rate,
    #[error("need at least one adapter")]
    NoAdapters,
    #[error("skewness {skew} outside [1/{num_adapters}, 1]")]
    Skew { skew: String, num_adapters: u32 },
    #[error("profile mix is empty or has invalid weights")]
    Mix,
    #[error("profile {0}: length distribution must produce positive integers")]
    Profile(String),
    #[error("replay arrivals must be sorted")]
    Replay,
}

/// Distribution over positive token counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LenDist {
    Fixed(usize),
    /// Inclusive on both ends.
    Uniform {
        lo: usize,
        hi: usize,
    },
}

impl LenDist {
    fn valid(self) -> bool {
        match self {
            LenDist::Fixed(n) => n >= 1,
            LenDist::Uniform { lo, hi } => lo >= 1 && lo <= hi,
        }
    }

    fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> usize {
        match self {
            LenDist::Fixed(n) => n,
            LenDist::Uniform { lo, hi } => rng.random_range(lo..=hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppProfile {
    pub name: String,
    pub input_len: LenDist,
    pub output_len: LenDist,
    pub head: HeadKind,
    pub latency_budget: Option<Duration>,
}

impl AppProfile {
    /// Six 256-token frames in, 5 to 10 tokens out, answered by a task head.
    pub fn video() -> Self {
        Self {
            name: "video".into(),
            input_len: LenDist::Fixed(6 * 256),
            output_len: LenDist::Uniform { lo: 5, hi: 10 },
            head: HeadKind::Task,
            latency_budget: None,
        }
    }

    /// One 256-token image in, 200 to 300 generated tokens out.
    pub fn vqa() -> Self {
        Self {
            name: "vqa".into(),
            input_len: LenDist::Fixed(256),
            output_len: LenDist::Uniform { lo: 200, hi: 300 },
            head: HeadKind::Lm,
            latency_budget: None,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "video" => Some(Self::video()),
            "vqa" => Some(Self::vqa()),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), WorkloadError> {
        if self.input_len.valid() && self.output_len.valid() {
            Ok(())
        } else {
            Err(WorkloadError::Profile(self.name.clone()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Arrival {
    Poisson,
    /// Evenly spaced at `1 / rate`.
    Uniform,
    /// Fixed arrival instants, e.g. taken from an existing trace; `rate`
    /// and `duration` are ignored.
    Replay(Vec<Duration>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub duration: Duration,
    /// Mean requests per second.
    pub rate: f64,
    pub arrival: Arrival,
    pub num_adapters: u32,
    /// Probability that a request targets the hot adapter (id 0).
    pub skewness: f64,
    pub mix: Vec<(AppProfile, f64)>,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.num_adapters == 0 {
            return Err(WorkloadError::NoAdapters);
        }
        if !matches!(self.arrival, Arrival::Replay(_)) && !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(WorkloadError::Rate);
        }
        let min = 1.0 / self.num_adapters as f64;
        if !(self.skewness <= 1.0 && self.skewness >= min - 1e-12) {
            return Err(WorkloadError::Skew {
                skew: alloc::format!("{}", self.skewness),
                num_adapters: self.num_adapters,
            });
        }
        if self.mix.is_empty() || self.mix.iter().any(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return Err(WorkloadError::Mix);
        }
        if self.mix.iter().all(|(_, w)| *w == 0.0) {
            return Err(WorkloadError::Mix);
        }
        for (p, _) in &self.mix {
            p.validate()?;
        }
        if let Arrival::Replay(times) = &self.arrival {
            if times.windows(2).any(|w| w[1] < w[0]) {
                return Err(WorkloadError::Replay);
            }
        }
        Ok(())
    }
}

/// Picks an adapter: the hot one (id 0) with probability `skew`, otherwise
/// uniform over the remaining ids.
pub fn sample_adapter<R: Rng + ?Sized>(num_adapters: u32, skew: f64, rng: &mut R) -> AdapterId {
    if num_adapters == 1 || rng.random::<f64>() < skew {
        AdapterId(0)
    } else {
        AdapterId(rng.random_range(1..num_adapters))
    }
}

fn arrival_times<R: Rng + ?Sized>(spec: &WorkloadSpec, rng: &mut R) -> Vec<Duration> {
    let horizon = spec.duration.as_secs_f64();
    let mut out = Vec::new();
    match &spec.arrival {
        Arrival::Replay(times) => out.extend_from_slice(times),
        Arrival::Uniform => {
            let gap = 1.0 / spec.rate;
            let mut i = 0u64;
            loop {
                let t = i as f64 * gap;
                if t >= horizon {
                    break;
                }
                out.push(Duration::from_nanos(libm::round(t * 1e9) as u64));
                i += 1;
            }
        }
        Arrival::Poisson => {
            let mut t = 0.0;
            loop {
                // inverse-CDF exponential; 1 - u keeps the argument in (0, 1]
                let u: f64 = rng.random();
                t += -libm::log(1.0 - u) / spec.rate;
                if t >= horizon {
                    break;
                }
                out.push(Duration::from_nanos(libm::round(t * 1e9) as u64));
            }
        }
    }
    out
}

/// Generates a trace sorted by arrival time. Deterministic in `spec`.
pub fn generate(spec: &WorkloadSpec) -> Result<Vec<Request>, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let times = arrival_times(spec, &mut rng);
    let weights = WeightedIndex::new(spec.mix.iter().map(|(_, w)| *w)).map_err(|_| WorkloadError::Mix)?;
    Ok(times
        .into_iter()
        .enumerate()
        .map(|(i, at)| {
            let adapter = sample_adapter(spec.num_adapters, spec.skewness, &mut rng);
            let p = &spec.mix[weights.sample(&mut rng)].0;
            let input = p.input_len.sample(&mut rng);
            let output = p.output_len.sample(&mut rng);
            Request::new(i as u64, adapter, at, input, output, p.head).with_budget(p.latency_budget)
        })
        .collect())
}
