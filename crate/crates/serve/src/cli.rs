//! Command-line interface: `tune`, `bench`, `fuse`, `gen-workload` and
//! `verify`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use lora_serve_core::atmm::{candidate_configs, default_shape_grid, tiling_search, TilingConfig, TilingTable};
use lora_serve_core::fusion::{fuse, validate_plan, FusionError};
use lora_serve_core::lora::ModelDims;
use lora_serve_core::orchestrator::{serve_loop, AdapterCacheConfig, ModePolicy, Request, ServeConfig, ThetaPolicy};
use lora_serve_core::workload::{generate, AppProfile, Arrival, WorkloadSpec};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clock::MonotonicClock;
use crate::config::{load_config, parse_duration_ms, parse_shape, RunConfig};
use crate::io::fixtures::{load_fixtures, synthetic_model};
use crate::io::fusion_file::{load_fusion_spec, save_plan};
use crate::io::metrics_file::write_metrics;
use crate::io::table_file::{load_table, save_table};
use crate::io::trace_file::{load_trace, save_trace};
use crate::io::{write_json, IoError};
use crate::par::ParallelGemm;
use crate::verify::{run_suite, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Default tiling used when no table file is given.
pub const FALLBACK_TILING: [usize; 6] = [64, 32, 32, 32, 32, 32];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Verification(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Verification(_) => EXIT_VERIFY,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

fn usage(e: impl ToString) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "lora-serve",
    version,
    about = "Desk-scale LoRA serving runtime: tiling search, serving benchmarks, knowledge fusion and verification"
)]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Profile tiling configs per GEMM shape and write a tiling table.
    Tune(TuneArgs),
    /// Serve a workload and write per-request and summary metrics.
    Bench(BenchArgs),
    /// Pack knowledge sources into adapters and write the plan.
    Fuse(FuseArgs),
    /// Generate a request trace CSV.
    GenWorkload(GenArgs),
    /// Run the invariant suite and print a JSON report.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated MxKxN shapes; defaults to the model's GEMM grid.
    #[arg(long, value_delimiter = ',')]
    pub shapes: Vec<String>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub ranks: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub m_values: Vec<usize>,
    /// Cache budget for one outer tile set, in KiB.
    #[arg(long)]
    pub cache_kib: Option<usize>,
    /// Evaluate a seeded random subset of this many candidates.
    #[arg(long)]
    pub max_candidates: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct WorkloadArgs {
    #[arg(long)]
    pub duration_s: Option<f64>,
    #[arg(long)]
    pub rate: Option<f64>,
    /// poisson or uniform.
    #[arg(long)]
    pub arrival: Option<String>,
    #[arg(long)]
    pub skew: Option<f64>,
    #[arg(long)]
    pub adapters: Option<u32>,
    /// Built-in profile (video or vqa); replaces the configured mix.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub tiling_table: Option<PathBuf>,
    /// Model manifest; a seeded synthetic model is used otherwise.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Trace CSV; a workload is generated otherwise.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// auto, merged, unmerged or mixture.
    #[arg(long, alias = "force-mode")]
    pub mode: Option<String>,
    #[arg(long)]
    pub max_bs: Option<usize>,
    /// Fixed starvation threshold; default is 5× the running batch time.
    #[arg(long)]
    pub theta_ms: Option<f64>,
    #[arg(long)]
    pub cache_capacity: Option<usize>,
    #[arg(long)]
    pub load_ms: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub workload: WorkloadArgs,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub workload: WorkloadArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Reduced instance counts (under a minute).
    #[arg(long)]
    pub quick: bool,
    /// Perturb a base weight mid-check; the suite must report the failure.
    #[arg(long)]
    pub inject_fault: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` and runs the command, writing human output to `out`.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Tune(a) => cmd_tune(&cfg, a, out),
        Command::Bench(a) => cmd_bench(&cfg, a, out),
        Command::Fuse(a) => cmd_fuse(&cfg, a, out),
        Command::GenWorkload(a) => cmd_gen(&cfg, a, out),
        Command::Verify(a) => cmd_verify(a, out),
    }
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(|e| IoError::Io { path: PathBuf::from("<stdout>"), source: e }.into())
}

fn dims(cfg: &RunConfig) -> Result<ModelDims, CliError> {
    let d = ModelDims {
        num_layers: cfg.layers.unwrap_or(4),
        hidden_dim: cfg.hidden.unwrap_or(256),
        vocab_size: cfg.vocab.unwrap_or(1024),
    };
    d.validate().map_err(usage)?;
    Ok(d)
}

fn ranks(cfg: &RunConfig) -> Vec<usize> {
    cfg.ranks.clone().unwrap_or_else(|| vec![8, 16, 32, 64])
}

pub fn cmd_tune(cfg: &RunConfig, a: TuneArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let t = cfg.tune.clone().unwrap_or_default();
    let d = dims(cfg)?;
    let hidden = a.hidden.unwrap_or(d.hidden_dim);
    let ranks = if a.ranks.is_empty() { ranks(cfg) } else { a.ranks.clone() };
    let m_values =
        if a.m_values.is_empty() { t.m_values.unwrap_or_else(|| vec![1, 32, 256]) } else { a.m_values.clone() };
    let shape_strs = if a.shapes.is_empty() { t.shapes.unwrap_or_default() } else { a.shapes.clone() };
    let grid: Vec<(usize, usize, usize)> = if shape_strs.is_empty() {
        let mut g = default_shape_grid(hidden, &ranks, &m_values);
        g.extend(m_values.iter().map(|&m| (m, hidden, d.vocab_size)));
        g
    } else {
        shape_strs.iter().map(|s| parse_shape(s)).collect::<Result<_, _>>().map_err(usage)?
    };
    let cache_kib = a.cache_kib.or(t.cache_kib).unwrap_or(64);
    let trials = a.trials.or(t.trials).unwrap_or(5);
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let mut candidates = candidate_configs(cache_kib * 1024, 4).map_err(usage)?;
    if candidates.is_empty() {
        return Err(usage(format!("no tiling config fits a {cache_kib} KiB budget")));
    }
    let max = a.max_candidates.or(t.max_candidates).unwrap_or(48).max(1);
    if candidates.len() > max {
        candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        candidates.truncate(max);
        candidates.sort_unstable();
    }
    say(out, format_args!("tuning {} shapes x {} candidates, {trials} trials", grid.len(), candidates.len()))?;
    let clock = MonotonicClock::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::new();
    let outcome = tiling_search(&grid, &candidates, trials, &clock, &mut rng, |_, (m, k, n), e| {
        lines.push(format!("{m}x{k}x{n} -> {} ({} ns)", e.config, e.measured_ns));
    })
    .map_err(usage)?;
    for l in lines {
        say(out, format_args!("{l}"))?;
    }
    for f in &outcome.failures {
        say(out, format_args!("failed {:?}: {}", f.shape, f.error))?;
    }
    if outcome.coarse_timer_shapes > 0 {
        say(out, format_args!("warning: {} shapes ran close to the timer resolution", outcome.coarse_timer_shapes))?;
    }
    save_table(&a.out, &outcome.table)?;
    say(
        out,
        format_args!(
            "default {}; wrote {} entries to {}",
            outcome.table.default_config(),
            outcome.table.len(),
            a.out.display()
        ),
    )
}

fn table_from(path: Option<&Path>) -> Result<TilingTable, CliError> {
    match path {
        Some(p) => Ok(load_table(p)?),
        None => Ok(TilingTable::uniform(TilingConfig::from_array(FALLBACK_TILING).map_err(usage)?).map_err(usage)?),
    }
}

/// Resolves a workload from flags, then the config file, then defaults.
pub fn workload_spec(cfg: &RunConfig, a: &WorkloadArgs) -> Result<WorkloadSpec, CliError> {
    let w = cfg.workload.clone().unwrap_or_default();
    let num_adapters = a.adapters.or(cfg.adapters).unwrap_or(8);
    let arrival = match a.arrival.as_deref().or(w.arrival.as_deref()).unwrap_or("poisson") {
        "poisson" => Arrival::Poisson,
        "uniform" => Arrival::Uniform,
        other => {
            return Err(usage(format!("unknown arrival process {other:?}; use poisson or uniform, or pass --trace")))
        }
    };
    let mix = match &a.profile {
        Some(name) => {
            let p = AppProfile::by_name(name).ok_or_else(|| usage(format!("unknown profile {name:?}")))?;
            vec![(p, 1.0)]
        }
        None if w.profiles.is_empty() => vec![(AppProfile::vqa(), 1.0)],
        None => {
            w.profiles.iter().map(|p| p.to_profile().map(|x| (x, p.weight))).collect::<Result<_, _>>().map_err(usage)?
        }
    };
    let secs = a.duration_s.or(w.duration_s).unwrap_or(10.0);
    let duration = Duration::try_from_secs_f64(secs).map_err(|_| usage(format!("invalid duration {secs}")))?;
    Ok(WorkloadSpec {
        duration,
        rate: a.rate.or(w.rate).unwrap_or(4.0),
        arrival,
        num_adapters,
        skewness: a.skew.or(w.skewness).unwrap_or(0.8),
        mix,
        seed: a.seed.or(w.seed).or(cfg.seed).unwrap_or(0),
    })
}

pub fn cmd_bench(cfg: &RunConfig, a: BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let table = Arc::new(table_from(a.tiling_table.as_deref().or(cfg.tiling_table.as_deref()))?);
    let spec = workload_spec(cfg, &a.workload)?;
    let (mut model, adapters) = match a.model.as_ref().or(cfg.model.as_ref()) {
        Some(p) => load_fixtures(p)?,
        None => synthetic_model(
            dims(cfg)?,
            &ranks(cfg),
            spec.num_adapters,
            Some(cfg.task_classes.unwrap_or(16)),
            cfg.seed.unwrap_or(0),
        )
        .map_err(usage)?,
    };
    let trace: Vec<Request> = match a.trace.as_ref().or(cfg.trace.as_ref()) {
        Some(p) => load_trace(p)?,
        None => generate(&spec).map_err(usage)?,
    };
    let mode = a.mode.as_deref().or(cfg.mode.as_deref()).unwrap_or("auto");
    let policy = ModePolicy::parse(mode).ok_or_else(|| usage(format!("unknown mode {mode:?}")))?;
    let theta = match a.theta_ms.or(cfg.theta_ms) {
        Some(ms) => ThetaPolicy::Fixed(parse_duration_ms(ms).map_err(usage)?),
        None => ThetaPolicy::BatchMultiple(cfg.theta_multiple.unwrap_or(5.0)),
    };
    let adapter_cache = match a.cache_capacity.or(cfg.cache_capacity) {
        Some(capacity) => Some(AdapterCacheConfig {
            capacity,
            load_latency: parse_duration_ms(a.load_ms.or(cfg.load_ms).unwrap_or(1.0)).map_err(usage)?,
        }),
        None => None,
    };
    let serve_cfg = ServeConfig {
        max_bs: a.max_bs.or(cfg.max_bs).unwrap_or(32),
        theta,
        ewma_alpha: cfg.ewma_alpha.unwrap_or(0.2),
        policy,
        adapter_cache,
    };
    let gemm = ParallelGemm::from_env(table);
    let metrics =
        serve_loop(&mut model, &adapters, &trace, &serve_cfg, &gemm, &MonotonicClock::new()).map_err(usage)?;
    let dir = a.out.or(cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("bench-out"));
    let s = write_metrics(&dir, &metrics)?;
    say(
        out,
        format_args!(
            "{} requests, mode {}: avg token latency {:.4} ms, throughput {:.3} req/s, {} switches ({:.3} ms), {} budget violations; wrote {}",
            s.requests,
            policy.as_str(),
            s.avg_token_latency_ms,
            s.throughput_rps,
            s.switches,
            s.switch_time_ms,
            s.budget_violations,
            dir.display()
        ),
    )
}

pub fn cmd_fuse(cfg: &RunConfig, a: FuseArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = load_fusion_spec(&a.spec)?;
    let seed = a.seed.or(cfg.seed).unwrap_or(spec.seed);
    let oracle = spec.oracle.build().map_err(usage)?;
    let sources = spec.sources();
    let plan = fuse(&sources, &oracle, seed).map_err(|e| match e {
        FusionError::Unsatisfiable { source_id, .. } => usage(format!("source {source_id} is unsatisfiable: {e}")),
        other => usage(other),
    })?;
    let report = validate_plan(&plan, &sources, &oracle);
    if !report.is_clean() {
        return Err(CliError::Verification(format!("plan failed re-validation: {:?}", report.issues)));
    }
    save_plan(&a.out, &plan, seed)?;
    say(
        out,
        format_args!("{} sources -> {} adapters ({} rollbacks)", sources.len(), plan.num_adapters(), plan.rollbacks),
    )?;
    for (i, ad) in plan.adapters.iter().enumerate() {
        let accs: Vec<String> = ad.accuracies.iter().map(|t| format!("{}:{:.4}", t.source, t.accuracy)).collect();
        say(out, format_args!("adapter {i}: sources {:?} accuracies [{}]", ad.sources, accs.join(", ")))?;
    }
    Ok(())
}

pub fn cmd_gen(cfg: &RunConfig, a: GenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = workload_spec(cfg, &a.workload)?;
    let trace = generate(&spec).map_err(usage)?;
    save_trace(&a.out, &trace)?;
    say(out, format_args!("wrote {} requests to {}", trace.len(), a.out.display()))
}

pub fn cmd_verify(a: VerifyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let report = run_suite(VerifyOptions { quick: a.quick, seed: a.seed, inject_fault: a.inject_fault });
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    say(out, format_args!("{json}"))?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Verification(format!("failed properties: {}", report.failed().join(", "))))
    }
}
