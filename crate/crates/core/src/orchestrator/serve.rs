use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;
use core::time::Duration;

use crate::atmm::Gemm;
use crate::clock::Clock;
use crate::lora::{
    forward, project_head, AdapterId, Adapters, BaseModel, HeadKind, LoraError, MacCount, Mode, ModelState,
};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

use super::credit::{update_credits, Estimates, DEFAULT_EWMA_ALPHA};
use super::request::{Request, RequestId, RequestState};
use super::scheduler::{decide, ModePolicy, SchedulerConfig};
use super::switch::mode_switch;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ServeError {
    #[error("request {request} references unknown adapter {adapter}")]
    UnknownAdapter { request: RequestId, adapter: AdapterId },
    #[error("request {request} asks for a task head but adapter {adapter} has none")]
    MissingTaskHead { request: RequestId, adapter: AdapterId },
    #[error("trace not sorted by arrival time at index {0}")]
    Unsorted(usize),
    #[error("invalid serve config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Lora(#[from] LoraError),
}

/// Starvation threshold used at each decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaPolicy {
    /// Multiple of the running mean batch duration; unbounded until the
    /// first round has been measured.
    BatchMultiple(f64),
    Fixed(Duration),
}

impl Default for ThetaPolicy {
    fn default() -> Self {
        ThetaPolicy::BatchMultiple(5.0)
    }
}

impl ThetaPolicy {
    fn theta(self, est: &Estimates) -> Duration {
        match self {
            ThetaPolicy::Fixed(d) => d,
            ThetaPolicy::BatchMultiple(k) => match est.batch.get() {
                Some(b) => b.mul_f64(k).max(Duration::from_nanos(1)),
                None => Duration::MAX,
            },
        }
    }
}

/// Fixed-capacity LRU of device-resident adapters; a miss costs a constant
/// load latency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdapterCacheConfig {
    pub capacity: usize,
    pub load_latency: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeConfig {
    pub max_bs: usize,
    pub theta: ThetaPolicy,
    pub ewma_alpha: f64,
    pub policy: ModePolicy,
    pub adapter_cache: Option<AdapterCacheConfig>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            max_bs: 32,
            theta: ThetaPolicy::default(),
            ewma_alpha: DEFAULT_EWMA_ALPHA,
            policy: ModePolicy::Auto,
            adapter_cache: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestRecord {
    pub id: RequestId,
    pub adapter: AdapterId,
    pub head: HeadKind,
    pub arrival: Duration,
    pub start: Duration,
    pub finish: Duration,
    pub rounds: usize,
    pub input_tokens: usize,
    pub output_tokens: usize,
    pub budget_violated: bool,
    /// Longest single wait span (queued to selected).
    pub max_wait: Duration,
    /// Largest `span - θ at the last skip within the span`.
    pub wait_excess: Duration,
}

impl RequestRecord {
    pub fn e2e(&self) -> Duration {
        self.finish - self.arrival
    }

    pub fn tokens(&self) -> usize {
        self.input_tokens + self.output_tokens
    }
}

/// A busy interval: a decode round in `mode`, or a switch into `mode`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeSpan {
    pub start: Duration,
    pub end: Duration,
    pub mode: Mode,
    pub switching: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ModeOccupancy {
    pub merged: Duration,
    pub unmerged: Duration,
    pub mixture: Duration,
    pub switching: Duration,
}

impl ModeOccupancy {
    pub fn busy(&self) -> Duration {
        self.merged + self.unmerged + self.mixture + self.switching
    }

    /// Fractions of busy time as (merged, unmerged, mixture, switching).
    pub fn fractions(&self) -> [f64; 4] {
        let b = self.busy().as_secs_f64();
        if b == 0.0 {
            return [0.0; 4];
        }
        [self.merged, self.unmerged, self.mixture, self.switching].map(|d| d.as_secs_f64() / b)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub requests: Vec<RequestRecord>,
    pub timeline: Vec<ModeSpan>,
    pub occupancy: ModeOccupancy,
    pub rounds: usize,
    pub switches: usize,
    pub switch_time: Duration,
    pub max_round: Duration,
    pub max_switch: Duration,
    pub budget_violations: usize,
    /// Decisions where more requests were starving than fit in a batch.
    pub starvation_overflows: usize,
    pub adapter_loads: usize,
    pub macs: MacCount,
    /// Bypass MACs executed during merged-mode rounds (expected zero).
    pub merged_bypass_macs: u64,
    pub unserved: usize,
}

impl Metrics {
    pub fn total_e2e_ns(&self) -> u128 {
        self.requests.iter().map(|r| r.e2e().as_nanos()).sum()
    }

    pub fn total_tokens(&self) -> usize {
        self.requests.iter().map(RequestRecord::tokens).sum()
    }

    /// Sum of end-to-end latencies over the total token count, in ms.
    pub fn avg_token_latency_ms(&self) -> f64 {
        let tokens = self.total_tokens();
        if tokens == 0 {
            return 0.0;
        }
        self.total_e2e_ns() as f64 / tokens as f64 / 1e6
    }

    /// Completed requests per second between the first arrival and the
    /// last completion.
    pub fn throughput_rps(&self) -> f64 {
        let first = self.requests.iter().map(|r| r.arrival).min();
        let last = self.requests.iter().map(|r| r.finish).max();
        match (first, last) {
            (Some(a), Some(b)) if b > a => self.requests.len() as f64 / (b - a).as_secs_f64(),
            _ => 0.0,
        }
    }

    pub fn max_wait_excess(&self) -> Duration {
        self.requests.iter().map(|r| r.wait_excess).max().unwrap_or_default()
    }

    pub fn max_wait(&self) -> Duration {
        self.requests.iter().map(|r| r.max_wait).max().unwrap_or_default()
    }

    fn record_busy(&mut self, start: Duration, end: Duration, mode: Mode, switching: bool) {
        let d = end - start;
        let slot = if switching {
            &mut self.occupancy.switching
        } else {
            match mode {
                Mode::Merged(_) => &mut self.occupancy.merged,
                Mode::Unmerged => &mut self.occupancy.unmerged,
                Mode::Mixture(_) => &mut self.occupancy.mixture,
            }
        };
        *slot += d;
        match self.timeline.last_mut() {
            Some(s) if s.end == start && s.mode == mode && s.switching == switching => s.end = end,
            _ => self.timeline.push(ModeSpan { start, end, mode, switching }),
        }
    }
}

struct Live {
    req: Request,
    rounds_done: usize,
    start: Option<Duration>,
    theta_at_skip: Duration,
    max_wait: Duration,
    wait_excess: Duration,
}

struct AdapterCache {
    cfg: AdapterCacheConfig,
    resident: VecDeque<AdapterId>,
}

impl AdapterCache {
    /// Touches `ids` and returns how many had to be loaded.
    fn touch(&mut self, ids: impl IntoIterator<Item = AdapterId>) -> usize {
        let mut misses = 0;
        for id in ids {
            if let Some(pos) = self.resident.iter().position(|&r| r == id) {
                self.resident.remove(pos);
            } else {
                misses += 1;
                if self.resident.len() >= self.cfg.capacity {
                    self.resident.pop_front();
                }
            }
            self.resident.push_back(id);
        }
        misses
    }
}

fn validate<T: Scalar>(trace: &[Request], adapters: &Adapters<T>, cfg: &ServeConfig) -> Result<(), ServeError> {
    if cfg.max_bs == 0 {
        return Err(ServeError::InvalidConfig("max_bs must be at least 1"));
    }
    if !(cfg.ewma_alpha > 0.0 && cfg.ewma_alpha <= 1.0) {
        return Err(ServeError::InvalidConfig("ewma_alpha must be in (0, 1]"));
    }
    match cfg.theta {
        ThetaPolicy::Fixed(d) if d.is_zero() => return Err(ServeError::InvalidConfig("theta must be positive")),
        ThetaPolicy::BatchMultiple(k) if !k.is_finite() || k <= 0.0 => {
            return Err(ServeError::InvalidConfig("theta multiple must be positive"))
        }
        _ => {}
    }
    if matches!(cfg.adapter_cache, Some(c) if c.capacity == 0) {
        return Err(ServeError::InvalidConfig("adapter cache capacity must be at least 1"));
    }
    for (i, r) in trace.iter().enumerate() {
        if i > 0 && r.arrival < trace[i - 1].arrival {
            return Err(ServeError::Unsorted(i));
        }
        let a = adapters.get(&r.adapter).ok_or(ServeError::UnknownAdapter { request: r.id, adapter: r.adapter })?;
        if r.head == HeadKind::Task && a.task_head().is_none() {
            return Err(ServeError::MissingTaskHead { request: r.id, adapter: r.adapter });
        }
    }
    Ok(())
}

/// Executes one decode round for `batch` and returns the MACs spent.
fn run_round<T: Scalar, G: Gemm<T> + ?Sized>(
    model: &BaseModel<T>,
    state: &ModelState<T>,
    live: &[Live],
    batch: &[usize],
    adapters: &Adapters<T>,
    gemm: &G,
) -> Result<MacCount, LoraError> {
    let d = model.hidden_dim();
    let mut assignment = Vec::new();
    let mut last_rows = Vec::with_capacity(batch.len());
    for &i in batch {
        let l = &live[i];
        let rows = if l.rounds_done == 0 { l.req.input_len.max(1) } else { 1 };
        assignment.extend(core::iter::repeat_n(l.req.adapter, rows));
        last_rows.push(assignment.len() - 1);
    }
    let x = Matrix::from_fn(assignment.len(), d, |i, j| T::from_f64(((i * 31 + j * 7) % 17) as f64 / 8.0 - 1.0));
    let out = forward(model, state, &x, &assignment, adapters, gemm)?;
    let mut macs = out.macs;

    let mut lm_rows = Vec::new();
    let mut task_rows: BTreeMap<AdapterId, Vec<usize>> = BTreeMap::new();
    for (&i, &row) in batch.iter().zip(&last_rows) {
        match live[i].req.head {
            HeadKind::Lm => lm_rows.push(row),
            HeadKind::Task => task_rows.entry(live[i].req.adapter).or_default().push(row),
        }
    }
    if !lm_rows.is_empty() {
        let h = out.output.gather_rows(&lm_rows);
        let (logits, m) = project_head(model, None, HeadKind::Lm, &h, gemm)?;
        core::hint::black_box(&logits);
        macs.head += m;
    }
    for (id, rows) in task_rows {
        let h = out.output.gather_rows(&rows);
        let (logits, m) = project_head(model, Some(&adapters[&id]), HeadKind::Task, &h, gemm)?;
        core::hint::black_box(&logits);
        macs.head += m;
    }
    Ok(macs)
}

/// Continuous-batching serving loop over a trace sorted by arrival.
///
/// Time is virtual: it starts at zero, advances by the measured duration of
/// every switch and decode round (plus adapter load latency), and jumps to
/// the next arrival when nothing is active. The model is returned to the
/// unmerged state before returning.
pub fn serve_loop<T: Scalar, G: Gemm<T> + ?Sized, C: Clock + ?Sized>(
    model: &mut BaseModel<T>,
    adapters: &Adapters<T>,
    trace: &[Request],
    cfg: &ServeConfig,
    gemm: &G,
    clock: &C,
) -> Result<Metrics, ServeError> {
    validate(trace, adapters, cfg)?;
    let mut metrics = Metrics::default();
    let mut est = Estimates::new(cfg.ewma_alpha);
    let mut state = ModelState::new();
    let mut cache = cfg.adapter_cache.map(|c| AdapterCache { cfg: c, resident: VecDeque::new() });
    let mut live: Vec<Live> = Vec::new();
    let mut next = 0;
    let mut now = Duration::ZERO;

    loop {
        while next < trace.len() && trace[next].arrival <= now {
            let mut req = trace[next].clone();
            req.state = RequestState::Queued;
            req.queued_since = Some(req.arrival);
            req.waited = Duration::ZERO;
            live.push(Live {
                req,
                rounds_done: 0,
                start: None,
                theta_at_skip: Duration::ZERO,
                max_wait: Duration::ZERO,
                wait_excess: Duration::ZERO,
            });
            next += 1;
        }
        if live.is_empty() {
            match trace.get(next) {
                Some(r) => {
                    now = now.max(r.arrival);
                    continue;
                }
                None => break,
            }
        }

        let theta = cfg.theta.theta(&est);
        let sched = SchedulerConfig { max_bs: cfg.max_bs, theta };
        let mut snapshot: Vec<Request> = live.iter().map(|l| l.req.clone()).collect();
        update_credits(&mut snapshot, now, state.mode(), &est);
        let decision = decide(&snapshot, state.mode(), &sched, cfg.policy);
        if decision.starving > cfg.max_bs {
            metrics.starvation_overflows += 1;
        }
        debug_assert!(!decision.batch.is_empty());

        let mut selected = alloc::vec![false; live.len()];
        for &i in &decision.batch {
            selected[i] = true;
        }
        for (i, l) in live.iter_mut().enumerate() {
            l.req.credit = snapshot[i].credit;
            let Some(q) = l.req.queued_since else { continue };
            if selected[i] {
                let span = now - q;
                l.max_wait = l.max_wait.max(span);
                l.wait_excess = l.wait_excess.max(span.saturating_sub(l.theta_at_skip));
                l.theta_at_skip = Duration::ZERO;
                l.req.waited += span;
                l.req.queued_since = None;
                l.req.state = RequestState::Running;
                l.start.get_or_insert(now);
            } else {
                l.theta_at_skip = theta;
            }
        }

        if decision.mode != state.mode() {
            let report = mode_switch(model, &mut state, decision.mode, adapters, gemm, clock)?;
            let start = now;
            now += report.latency;
            metrics.record_busy(start, now, decision.mode, true);
            metrics.switches += 1;
            metrics.switch_time += report.latency;
            metrics.max_switch = metrics.max_switch.max(report.latency);
            if let Some(d) = report.merge {
                est.merge.observe(d);
            }
            if let Some(d) = report.unmerge {
                est.unmerge.observe(d);
            }
            if let Some(d) = report.delora_setup {
                est.delora_setup.observe(d);
            }
        }

        let load = match cache.as_mut() {
            Some(c) => {
                let mut ids: Vec<AdapterId> = decision.batch.iter().map(|&i| live[i].req.adapter).collect();
                ids.extend(state.mode().merged_adapter());
                ids.sort_unstable();
                ids.dedup();
                let misses = c.touch(ids);
                metrics.adapter_loads += misses;
                c.cfg.load_latency * misses as u32
            }
            None => Duration::ZERO,
        };
        let t0 = clock.now();
        let macs = run_round(model, &state, &live, &decision.batch, adapters, gemm)?;
        let compute = clock.now().saturating_sub(t0);
        let round = compute + load;
        let start = now;
        now += round;
        metrics.record_busy(start, now, state.mode(), false);
        metrics.rounds += 1;
        metrics.max_round = metrics.max_round.max(round);
        if matches!(state.mode(), Mode::Merged(_)) {
            metrics.merged_bypass_macs += macs.bypass;
        }
        metrics.macs += macs;
        est.batch.observe(round);
        est.exec_mut(state.mode()).observe(round);

        for &i in &decision.batch {
            let l = &mut live[i];
            l.rounds_done += 1;
            if l.rounds_done >= l.req.effective_output_len() {
                l.req.state = RequestState::Done;
                l.req.completion = Some(now);
                let budget_violated = l.req.latency_budget.is_some_and(|b| now - l.req.arrival > b);
                metrics.budget_violations += budget_violated as usize;
                metrics.requests.push(RequestRecord {
                    id: l.req.id,
                    adapter: l.req.adapter,
                    head: l.req.head,
                    arrival: l.req.arrival,
                    start: l.start.unwrap_or(now),
                    finish: now,
                    rounds: l.rounds_done,
                    input_tokens: l.req.input_len,
                    output_tokens: l.req.effective_output_len(),
                    budget_violated,
                    max_wait: l.max_wait,
                    wait_excess: l.wait_excess,
                });
            } else {
                l.req.queued_since = Some(now);
            }
        }
        live.retain(|l| l.req.state != RequestState::Done);
    }

    metrics.unserved = trace.len() - metrics.requests.len();
    mode_switch(model, &mut state, Mode::Unmerged, adapters, gemm, clock)?;
    Ok(metrics)
}
