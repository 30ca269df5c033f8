use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::time::Duration;

use rand::Rng;

use super::config::{TilingConfig, TilingError};
use super::kernel::atmm_multiply;
use super::table::{ShapeKey, TableEntry, TilingTable};
use crate::clock::Clock;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchResult {
    /// Median wall-clock duration over the trials.
    pub median: Duration,
    /// Set when the median is within 10× of the clock resolution.
    pub coarse_timer: bool,
}

/// Median-of-trials timing of one `(shape, config)` pair. Operands are
/// re-randomized before every trial and one untimed warm-up run precedes
/// the measurements.
pub fn benchmark_config<C: Clock + ?Sized, R: Rng + ?Sized>(
    m: usize,
    k: usize,
    n: usize,
    config: &TilingConfig,
    trials: usize,
    clock: &C,
    rng: &mut R,
) -> Result<BenchResult, TilingError> {
    if trials < 3 {
        return Err(TilingError::TooFewTrials(trials));
    }
    config.validate()?;
    let a = Matrix::<f32>::random(m, k, 1.0, rng);
    let b = Matrix::<f32>::random(k, n, 1.0, rng);
    core::hint::black_box(atmm_multiply(&a, &b, config)?);

    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let a = Matrix::<f32>::random(m, k, 1.0, rng);
        let b = Matrix::<f32>::random(k, n, 1.0, rng);
        let start = clock.now();
        let c = atmm_multiply(core::hint::black_box(&a), core::hint::black_box(&b), config)?;
        let elapsed = clock.now().saturating_sub(start);
        core::hint::black_box(c);
        samples.push(elapsed);
    }
    samples.sort_unstable();
    let median = samples[trials / 2];
    Ok(BenchResult { median, coarse_timer: median < clock.resolution() * 10 })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchFailure {
    pub shape: (usize, usize, usize),
    pub error: TilingError,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub table: TilingTable,
    /// Grid shapes for which every candidate failed to benchmark.
    pub failures: Vec<SearchFailure>,
    /// Number of shapes whose median hit the timer-resolution warning.
    pub coarse_timer_shapes: usize,
}

/// Products smaller than this many MACs are repeated within one timed
/// sample so the sample stays well above timer resolution and jitter.
const SAMPLE_MACS: usize = 1 << 20;

/// Candidates within this margin (per mille) of the leading median go to a
/// second, finalist-only round with twice the trials, at most
/// `MAX_FINALISTS` of them. The argmin
/// of a single round over many close candidates is biased towards whichever
/// one drew the luckiest samples.
const FINALIST_SLACK_PERMILLE: u32 = 150;
const MAX_FINALISTS: usize = 4;

/// Median per-product time of each config, with every trial round timing
/// each config once on fresh operands. A product's time depends on what ran
/// just before it, so every sample follows an untimed product with the same
/// config, and the starting config rotates between rounds.
fn round_robin<C: Clock + ?Sized, R: Rng + ?Sized>(
    (m, k, n): (usize, usize, usize),
    configs: &[TilingConfig],
    trials: usize,
    reps: usize,
    clock: &C,
    rng: &mut R,
) -> Result<Vec<Duration>, TilingError> {
    let a = Matrix::<f32>::random(m, k, 1.0, rng);
    let b = Matrix::<f32>::random(k, n, 1.0, rng);
    for cfg in configs {
        core::hint::black_box(atmm_multiply(&a, &b, cfg)?);
    }
    let mut samples: Vec<Vec<Duration>> = configs.iter().map(|_| Vec::with_capacity(trials)).collect();
    for trial in 0..trials {
        let a = Matrix::<f32>::random(m, k, 1.0, rng);
        let b = Matrix::<f32>::random(k, n, 1.0, rng);
        for i in (0..configs.len()).map(|i| (i + trial) % configs.len()) {
            let (cfg, s) = (&configs[i], &mut samples[i]);
            core::hint::black_box(atmm_multiply(&a, &b, cfg)?);
            let start = clock.now();
            for _ in 0..reps {
                let c = atmm_multiply(core::hint::black_box(&a), core::hint::black_box(&b), cfg)?;
                core::hint::black_box(c);
            }
            s.push(clock.now().saturating_sub(start) / reps as u32);
        }
    }
    Ok(samples
        .into_iter()
        .map(|mut s| {
            s.sort_unstable();
            s[trials / 2]
        })
        .collect())
}

/// Profiles every candidate on every grid shape and records the empirical
/// argmin per shape. Measurements run one at a time; each trial round times
/// every candidate once on fresh operands, so slow drift in host speed hits
/// all candidates alike. Recorded times are per product. Ties go to the lexicographically smallest config.
/// The default config is the most frequent winner.
pub fn tiling_search<C: Clock + ?Sized, R: Rng + ?Sized>(
    shape_grid: &[(usize, usize, usize)],
    candidates: &[TilingConfig],
    trials: usize,
    clock: &C,
    rng: &mut R,
    mut progress: impl FnMut(usize, (usize, usize, usize), &TableEntry),
) -> Result<SearchOutcome, TilingError> {
    if shape_grid.is_empty() || candidates.is_empty() {
        return Err(TilingError::EmptySearch);
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let mut entries: BTreeMap<ShapeKey, TableEntry> = BTreeMap::new();
    let mut failures = Vec::new();
    let mut wins: BTreeMap<TilingConfig, usize> = BTreeMap::new();
    let mut coarse_timer_shapes = 0;

    for (idx, &(m, k, n)) in shape_grid.iter().enumerate() {
        let mut last_err = None;
        let valid: Vec<TilingConfig> = if trials < 3 {
            last_err = Some(TilingError::TooFewTrials(trials));
            Vec::new()
        } else {
            sorted
                .iter()
                .filter(|c| match c.validate() {
                    Ok(()) => true,
                    Err(e) => {
                        last_err = Some(e);
                        false
                    }
                })
                .copied()
                .collect()
        };
        let reps = (SAMPLE_MACS / (m * k * n).max(1)).clamp(1, 256);
        let mut best: Option<(TilingConfig, Duration)> = None;
        let mut coarse = false;
        if !valid.is_empty() {
            let medians = round_robin((m, k, n), &valid, trials, reps, clock, rng)?;
            coarse = medians.iter().any(|&t| t < clock.resolution() * 10);
            let lead = medians.iter().copied().min().unwrap_or_default();
            let mut finalists: Vec<(Duration, TilingConfig)> = valid
                .iter()
                .zip(&medians)
                .filter(|(_, &t)| t <= lead + lead / 1000 * FINALIST_SLACK_PERMILLE)
                .map(|(c, &t)| (t, *c))
                .collect();
            finalists.sort_unstable();
            finalists.truncate(MAX_FINALISTS);
            let mut finalists: Vec<TilingConfig> = finalists.into_iter().map(|(_, c)| c).collect();
            finalists.sort_unstable();
            let times = if finalists.len() > 1 {
                round_robin((m, k, n), &finalists, 2 * trials, reps, clock, rng)?
            } else {
                alloc::vec![lead]
            };
            for (cfg, t) in finalists.into_iter().zip(times) {
                if best.is_none_or(|(_, b)| t < b) {
                    best = Some((cfg, t));
                }
            }
        }
        coarse_timer_shapes += coarse as usize;
        match best {
            Some((config, t)) => {
                let entry = TableEntry { config, measured_ns: t.as_nanos() as u64 };
                *wins.entry(config).or_insert(0) += 1;
                let key = ShapeKey::for_shape(m, k, n);
                let keep = entries.get(&key).is_none_or(|old| entry.measured_ns < old.measured_ns);
                if keep {
                    entries.insert(key, entry);
                }
                progress(idx, (m, k, n), &entry);
            }
            None => {
                failures.push(SearchFailure { shape: (m, k, n), error: last_err.unwrap_or(TilingError::EmptySearch) })
            }
        }
    }

    // BTreeMap iteration is ascending, so the strict comparison keeps the
    // smallest config among equally frequent winners.
    let mut default = None;
    for (cfg, count) in &wins {
        if default.is_none_or(|(_, c)| *count > c) {
            default = Some((*cfg, *count));
        }
    }
    let (default_config, _) = default.ok_or(TilingError::EmptySearch)?;
    Ok(SearchOutcome { table: TilingTable::new(default_config, entries)?, failures, coarse_timer_shapes })
}

/// Shapes a LoRA-serving deployment multiplies: base layers `(m, d, d)`,
/// adapter down/up projections `(m, d, r)` / `(m, r, d)` and the weight
/// increment `(d, r, d)` for every rank.
pub fn default_shape_grid(hidden_dim: usize, ranks: &[usize], m_values: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut grid = Vec::new();
    for &m in m_values {
        grid.push((m, hidden_dim, hidden_dim));
        for &r in ranks {
            grid.push((m, hidden_dim, r));
            grid.push((m, r, hidden_dim));
        }
    }
    for &r in ranks {
        grid.push((hidden_dim, r, hidden_dim));
    }
    let mut seen = alloc::collections::BTreeSet::new();
    grid.retain(|s| seen.insert(ShapeKey::for_shape(s.0, s.1, s.2)));
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(v: [usize; 6]) -> TilingConfig {
        TilingConfig::from_array(v).unwrap()
    }

    #[test]
    fn benchmark_needs_three_trials() {
        let clock = ManualClock::new(Duration::from_micros(1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(benchmark_config(4, 4, 4, &cfg([16; 6]), 2, &clock, &mut rng), Err(TilingError::TooFewTrials(2)));
        let r = benchmark_config(4, 4, 4, &cfg([16; 6]), 5, &clock, &mut rng).unwrap();
        assert_eq!(r.median, Duration::from_micros(1));
        assert!(!r.coarse_timer);

        struct Coarse(ManualClock);
        impl Clock for Coarse {
            fn now(&self) -> Duration {
                self.0.now()
            }
            fn resolution(&self) -> Duration {
                Duration::from_millis(1)
            }
        }
        let coarse = Coarse(ManualClock::new(Duration::from_micros(1)));
        let r = benchmark_config(4, 4, 4, &cfg([16; 6]), 3, &coarse, &mut rng).unwrap();
        assert!(r.coarse_timer);
    }

    #[test]
    fn single_candidate_wins_everywhere() {
        let clock = ManualClock::new(Duration::from_micros(3));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let only = cfg([32, 16, 16, 16, 16, 16]);
        let grid = [(8, 8, 8), (40, 16, 4), (70, 3, 9)];
        let out = tiling_search(&grid, &[only], 3, &clock, &mut rng, |_, _, _| {}).unwrap();
        assert_eq!(out.table.len(), 3);
        assert!(out.table.entries().all(|(_, e)| e.config == only));
        assert_eq!(out.table.default_config(), only);
        assert!(out.failures.is_empty());
    }

    #[test]
    fn ties_go_to_smallest_config_and_failures_are_reported() {
        // constant-step clock: every candidate measures identically
        let clock = ManualClock::new(Duration::from_micros(1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cands = [cfg([64, 64, 64, 16, 16, 16]), cfg([16; 6]), cfg([32; 6])];
        let out = tiling_search(&[(8, 8, 8), (64, 8, 8)], &cands, 3, &clock, &mut rng, |_, _, _| {}).unwrap();
        assert!(out.table.entries().all(|(_, e)| e.config == cfg([16; 6])));

        let failing = tiling_search(&[(8, 8, 8)], &cands, 1, &clock, &mut rng, |_, _, _| {});
        assert_eq!(failing.unwrap_err(), TilingError::EmptySearch);
        assert!(tiling_search(&[], &cands, 3, &clock, &mut rng, |_, _, _| {}).is_err());
    }

    #[test]
    fn default_grid_contains_rank_shapes() {
        let g = default_shape_grid(256, &[16, 32, 64, 128], &[32, 256]);
        assert!(g.contains(&(32, 256, 16)));
        assert!(g.contains(&(256, 128, 256)));
        assert!(g.contains(&(256, 64, 256)));
        // (256, r, 256) increments coincide with the m=256 up-projections
        assert_eq!(g.len(), 18);
    }
}
