//! Accuracy-aware knowledge fusion: greedily pack knowledge sources into
//! as few adapters as possible while every fused task keeps its accuracy
//! requirement, rolling back the adapter on a violation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SourceId = u32;
pub type TaskId = u32;

/// Shape of a source's vision task head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSpec {
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeSource {
    pub id: SourceId,
    pub task_id: TaskId,
    /// Coarse task family, e.g. "image" or "video"; drives per-type decay
    /// and task-head eligibility.
    pub task_type: String,
    pub requirement: f64,
    pub head: Option<HeadSpec>,
}

impl KnowledgeSource {
    pub fn new(id: SourceId, task_id: TaskId, task_type: &str, requirement: f64) -> Self {
        Self { id, task_id, task_type: task_type.into(), requirement, head: None }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("no knowledge sources")]
    Empty,
    #[error("duplicate source id {0}")]
    DuplicateSource(SourceId),
    #[error("source {0}: requirement must be in [0, 1]")]
    InvalidRequirement(SourceId),
    #[error("source {source_id} cannot meet its own requirement {requirement} (accuracy {accuracy})")]
    Unsatisfiable { source_id: SourceId, requirement: f64, accuracy: f64 },
    #[error("invalid oracle spec: {0}")]
    OracleSpec(&'static str),
}

/// Stand-in for fine-tuning: trains an adapter state on a source and
/// evaluates a task's accuracy. Both must be deterministic.
pub trait AccuracyOracle {
    type State: Clone;

    fn init(&self) -> Self::State;
    fn train(&self, state: &Self::State, source: &KnowledgeSource) -> Self::State;
    fn eval(&self, state: &Self::State, task: TaskId) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskAccuracy {
    pub source: SourceId,
    pub task: TaskId,
    pub accuracy: f64,
    pub requirement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedAdapter {
    /// Member sources in training order.
    pub sources: Vec<SourceId>,
    pub accuracies: Vec<TaskAccuracy>,
    /// Present when every member shares one task type and has a head spec.
    pub task_head: Option<HeadSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionPlan {
    pub adapters: Vec<FusedAdapter>,
    /// The seeded processing order.
    pub order: Vec<SourceId>,
    pub rollbacks: usize,
}

impl FusionPlan {
    pub fn num_adapters(&self) -> usize {
        self.adapters.len()
    }
}

/// A plan together with the final oracle state of each adapter.
#[derive(Debug, Clone)]
pub struct FusionRun<S> {
    pub plan: FusionPlan,
    pub states: Vec<S>,
}

/// Seeded processing order as indices into `sources`.
pub fn fusion_order(len: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

fn check_sources(sources: &[KnowledgeSource]) -> Result<(), FusionError> {
    if sources.is_empty() {
        return Err(FusionError::Empty);
    }
    let mut seen = BTreeSet::new();
    for s in sources {
        if !seen.insert(s.id) {
            return Err(FusionError::DuplicateSource(s.id));
        }
        if !(0.0..=1.0).contains(&s.requirement) {
            return Err(FusionError::InvalidRequirement(s.id));
        }
    }
    Ok(())
}

fn evaluate<O: AccuracyOracle>(oracle: &O, state: &O::State, members: &[&KnowledgeSource]) -> Vec<TaskAccuracy> {
    members
        .iter()
        .map(|s| TaskAccuracy {
            source: s.id,
            task: s.task_id,
            accuracy: oracle.eval(state, s.task_id),
            requirement: s.requirement,
        })
        .collect()
}

fn head_for(members: &[&KnowledgeSource]) -> Option<HeadSpec> {
    let first = members.first()?;
    let mut classes = 0;
    for m in members {
        if m.task_type != first.task_type {
            return None;
        }
        classes += m.head?.classes;
    }
    Some(HeadSpec { classes })
}

fn close<O: AccuracyOracle>(
    oracle: &O,
    state: O::State,
    members: &[&KnowledgeSource],
    adapters: &mut Vec<FusedAdapter>,
    states: &mut Vec<O::State>,
) {
    adapters.push(FusedAdapter {
        sources: members.iter().map(|s| s.id).collect(),
        accuracies: evaluate(oracle, &state, members),
        task_head: head_for(members),
    });
    states.push(state);
}

/// Greedy fusion returning the per-adapter oracle states as well.
pub fn fuse_detailed<O: AccuracyOracle>(
    sources: &[KnowledgeSource],
    oracle: &O,
    seed: u64,
) -> Result<FusionRun<O::State>, FusionError> {
    check_sources(sources)?;
    let order = fusion_order(sources.len(), seed);
    let mut adapters = Vec::new();
    let mut states = Vec::new();
    let mut rollbacks = 0;
    let mut state = oracle.init();
    let mut members: Vec<&KnowledgeSource> = Vec::new();

    for &i in &order {
        let src = &sources[i];
        let checkpoint = state.clone();
        let trained = oracle.train(&state, src);
        members.push(src);
        let ok = evaluate(oracle, &trained, &members).iter().all(|a| a.accuracy >= a.requirement);
        if ok {
            state = trained;
            continue;
        }
        members.pop();
        if members.is_empty() {
            return Err(FusionError::Unsatisfiable {
                source_id: src.id,
                requirement: src.requirement,
                accuracy: oracle.eval(&trained, src.task_id),
            });
        }
        // roll back to the stored copy and start a fresh adapter
        rollbacks += 1;
        close(oracle, checkpoint, &members, &mut adapters, &mut states);
        members.clear();
        let fresh = oracle.train(&oracle.init(), src);
        let acc = oracle.eval(&fresh, src.task_id);
        if acc < src.requirement {
            return Err(FusionError::Unsatisfiable { source_id: src.id, requirement: src.requirement, accuracy: acc });
        }
        members.push(src);
        state = fresh;
    }
    close(oracle, state, &members, &mut adapters, &mut states);
    let order = order.iter().map(|&i| sources[i].id).collect();
    Ok(FusionRun { plan: FusionPlan { adapters, order, rollbacks }, states })
}

pub fn fuse<O: AccuracyOracle>(sources: &[KnowledgeSource], oracle: &O, seed: u64) -> Result<FusionPlan, FusionError> {
    fuse_detailed(sources, oracle, seed).map(|r| r.plan)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanIssue {
    UnknownSource {
        adapter: usize,
        source: SourceId,
    },
    /// Listed twice, or not at all (`adapter` is `None`).
    NotAPartition {
        adapter: Option<usize>,
        source: SourceId,
    },
    Violation {
        adapter: usize,
        accuracy: TaskAccuracy,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<PlanIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn violations(&self) -> usize {
        self.issues.iter().filter(|i| matches!(i, PlanIssue::Violation { .. })).count()
    }
}

/// Re-trains every adapter of `plan` in member order and re-evaluates all
/// fused tasks. Also checks that the plan partitions `sources` when the
/// plan is non-empty.
pub fn validate_plan<O: AccuracyOracle>(
    plan: &FusionPlan,
    sources: &[KnowledgeSource],
    oracle: &O,
) -> ValidationReport {
    let by_id: BTreeMap<SourceId, &KnowledgeSource> = sources.iter().map(|s| (s.id, s)).collect();
    let mut report = ValidationReport::default();
    let mut seen = BTreeSet::new();
    for (ai, adapter) in plan.adapters.iter().enumerate() {
        let mut members = Vec::new();
        for &sid in &adapter.sources {
            match by_id.get(&sid) {
                Some(s) => members.push(*s),
                None => report.issues.push(PlanIssue::UnknownSource { adapter: ai, source: sid }),
            }
            if !seen.insert(sid) {
                report.issues.push(PlanIssue::NotAPartition { adapter: Some(ai), source: sid });
            }
        }
        let mut state = oracle.init();
        for s in &members {
            state = oracle.train(&state, s);
        }
        for accuracy in evaluate(oracle, &state, &members) {
            if accuracy.accuracy < accuracy.requirement {
                report.issues.push(PlanIssue::Violation { adapter: ai, accuracy });
            }
        }
    }
    if !plan.adapters.is_empty() {
        for s in sources {
            if !seen.contains(&s.id) {
                report.issues.push(PlanIssue::NotAPartition { adapter: None, source: s.id });
            }
        }
    }
    report
}

/// How synthetic accuracy depends on what an adapter has absorbed.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleModel {
    /// `acc(task) = base - slope(type of task) * k`, `k` = fused sources.
    Decay { base: f64, default_slope: f64, slopes: BTreeMap<String, f64> },
    /// `acc(task) = base(task) - sum of penalty(task, other)` over the
    /// tasks of the other fused sources.
    Interference { default_base: f64, base: BTreeMap<TaskId, f64>, penalty: BTreeMap<(TaskId, TaskId), f64> },
}

/// Deterministic uniform noise in `[-amplitude, amplitude]` keyed on the
/// adapter contents and task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleNoise {
    pub seed: u64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOracle {
    model: OracleModel,
    noise: Option<OracleNoise>,
}

/// Oracle state: the fused sources plus a small weight vector that every
/// training step rewrites, so a rollback must restore bits, not recompute.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticState {
    pub members: Vec<(SourceId, TaskId, String)>,
    pub weights: Vec<f64>,
}

impl SyntheticState {
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.members == other.members
            && self.weights.len() == other.weights.len()
            && self.weights.iter().zip(&other.weights).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

const STATE_WIDTH: usize = 8;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn finite_in(x: f64, lo: f64, hi: f64) -> bool {
    x.is_finite() && x >= lo && x <= hi
}

impl SyntheticOracle {
    pub fn new(model: OracleModel, noise: Option<OracleNoise>) -> Result<Self, FusionError> {
        match &model {
            OracleModel::Decay { base, default_slope, slopes } => {
                if !finite_in(*base, 0.0, 1.0) {
                    return Err(FusionError::OracleSpec("decay base must be in [0, 1]"));
                }
                if !finite_in(*default_slope, 0.0, f64::MAX) || !slopes.values().all(|s| finite_in(*s, 0.0, f64::MAX)) {
                    return Err(FusionError::OracleSpec("decay slopes must be finite and non-negative"));
                }
            }
            OracleModel::Interference { default_base, base, penalty } => {
                if !finite_in(*default_base, 0.0, 1.0) || !base.values().all(|b| finite_in(*b, 0.0, 1.0)) {
                    return Err(FusionError::OracleSpec("interference base accuracies must be in [0, 1]"));
                }
                if !penalty.values().all(|p| finite_in(*p, 0.0, f64::MAX)) {
                    return Err(FusionError::OracleSpec("interference penalties must be finite and non-negative"));
                }
            }
        }
        if let Some(n) = noise {
            if !finite_in(n.amplitude, 0.0, 1.0) {
                return Err(FusionError::OracleSpec("noise amplitude must be in [0, 1]"));
            }
        }
        Ok(Self { model, noise })
    }

    /// Uniform decay `acc = base - slope * k` for every task type.
    pub fn decay(base: f64, slope: f64) -> Result<Self, FusionError> {
        Self::new(OracleModel::Decay { base, default_slope: slope, slopes: BTreeMap::new() }, None)
    }

    pub fn model(&self) -> &OracleModel {
        &self.model
    }

    fn noise(&self, state: &SyntheticState, task: TaskId) -> f64 {
        let Some(n) = self.noise else { return 0.0 };
        let mut h = splitmix(n.seed ^ u64::from(task).rotate_left(32));
        let mut ids: Vec<SourceId> = state.members.iter().map(|m| m.0).collect();
        ids.sort_unstable();
        for id in ids {
            h = splitmix(h ^ u64::from(id));
        }
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        (2.0 * u - 1.0) * n.amplitude
    }
}

impl AccuracyOracle for SyntheticOracle {
    type State = SyntheticState;

    fn init(&self) -> SyntheticState {
        SyntheticState { members: Vec::new(), weights: alloc::vec![0.0; STATE_WIDTH] }
    }

    fn train(&self, state: &SyntheticState, source: &KnowledgeSource) -> SyntheticState {
        let mut next = state.clone();
        next.members.push((source.id, source.task_id, source.task_type.clone()));
        for (i, w) in next.weights.iter_mut().enumerate() {
            let step = libm::sin(f64::from(source.id) * 0.7 + i as f64 * 1.3) * 0.1;
            *w = *w * 0.93 + step + *w * *w * 1e-3;
        }
        next
    }

    fn eval(&self, state: &SyntheticState, task: TaskId) -> f64 {
        let k = state.members.len() as f64;
        let raw = match &self.model {
            OracleModel::Decay { base, default_slope, slopes } => {
                let ty = state.members.iter().find(|m| m.1 == task).map(|m| m.2.as_str());
                let slope = ty.and_then(|t| slopes.get(t)).copied().unwrap_or(*default_slope);
                base - slope * k
            }
            OracleModel::Interference { default_base, base, penalty } => {
                let b = base.get(&task).copied().unwrap_or(*default_base);
                let mut own_seen = false;
                let mut loss = 0.0;
                for m in &state.members {
                    if m.1 == task && !own_seen {
                        own_seen = true;
                        continue;
                    }
                    loss += penalty.get(&(task, m.1)).copied().unwrap_or(0.0);
                }
                b - loss
            }
        };
        (raw + self.noise(state, task)).clamp(0.0, 1.0)
    }
}
