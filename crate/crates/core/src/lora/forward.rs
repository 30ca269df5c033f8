use alloc::sync::Arc;
use alloc::vec::Vec;
use core::ops::AddAssign;
use core::time::Duration;

use super::adapter::{AdapterId, Adapters, LoraAdapter};
use super::model::BaseModel;
use super::state::{Mode, ModelState};
use super::LoraError;
use crate::atmm::Gemm;
use crate::batch::{accumulate_bypass, plan_batch, Segment};
use crate::clock::Clock;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Multiply-add counts of a forward pass, split by branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MacCount {
    pub base: u64,
    pub bypass: u64,
    pub head: u64,
}

impl MacCount {
    pub fn total(&self) -> u64 {
        self.base + self.bypass + self.head
    }

    /// Floating-point operations (two per multiply-add).
    pub fn flops(&self) -> u64 {
        2 * self.total()
    }
}

impl AddAssign for MacCount {
    fn add_assign(&mut self, rhs: Self) {
        self.base += rhs.base;
        self.bypass += rhs.bypass;
        self.head += rhs.head;
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T = f32> {
    pub output: Matrix<T>,
    pub macs: MacCount,
}

fn check_rows<T: Scalar>(
    model: &BaseModel<T>,
    x: &Matrix<T>,
    assignment: Option<&[AdapterId]>,
) -> Result<(), LoraError> {
    if x.cols() != model.hidden_dim() {
        return Err(crate::matrix::MatrixError::ShapeMismatch {
            op: "forward",
            left: x.shape(),
            right: (model.hidden_dim(), model.hidden_dim()),
        }
        .into());
    }
    if let Some(a) = assignment {
        if a.len() != x.rows() {
            return Err(LoraError::AssignmentLength { expected: x.rows(), got: a.len() });
        }
    }
    Ok(())
}

fn check_known<T>(assignment: &[AdapterId], adapters: &Adapters<T>, skip: Option<AdapterId>) -> Result<(), LoraError> {
    for &a in assignment {
        if Some(a) != skip && !adapters.contains_key(&a) {
            return Err(LoraError::UnknownAdapter(a));
        }
    }
    Ok(())
}

fn base_layer<T: Scalar, G: Gemm<T> + ?Sized>(
    model: &BaseModel<T>,
    layer: usize,
    x: &Matrix<T>,
    gemm: &G,
    macs: &mut MacCount,
) -> Result<Matrix<T>, LoraError> {
    let d = model.hidden_dim() as u64;
    macs.base += x.rows() as u64 * d * d;
    Ok(gemm.gemm(x, &model.layers()[layer])?)
}

/// Merged mode: the folded weights alone, no bypass work.
pub fn forward_merged<T: Scalar, G: Gemm<T> + ?Sized>(
    model: &BaseModel<T>,
    state: &ModelState<T>,
    x: &Matrix<T>,
    gemm: &G,
) -> Result<ForwardOutput<T>, LoraError> {
    if !matches!(state.mode(), Mode::Merged(_)) {
        return Err(LoraError::ModeMismatch { expected: "merged", actual: state.mode() });
    }
    check_rows(model, x, None)?;
    let mut macs = MacCount::default();
    let mut h = x.clone();
    for layer in 0..model.num_layers() {
        h = base_layer(model, layer, &h, gemm, &mut macs)?;
        model.activation().apply(&mut h);
    }
    Ok(ForwardOutput { output: h, macs })
}

/// Unmerged mode: base weights plus a per-row bypass from the row's own
/// adapter, batched by segment.
pub fn forward_unmerged<T: Scalar, G: Gemm<T> + ?Sized>(
    model: &BaseModel<T>,
    state: &ModelState<T>,
    x: &Matrix<T>,
    assignment: &[AdapterId],
    adapters: &Adapters<T>,
    gemm: &G,
) -> Result<ForwardOutput<T>, LoraError> {
    if state.mode() != Mode::Unmerged {
        return Err(LoraError::ModeMismatch { expected: "unmerged", actual: state.mode() });
    }
    check_rows(model, x, Some(assignment))?;
    check_known(assignment, adapters, None)?;
    let plan = plan_batch(assignment);
    let resolve = |id| adapters.get(&id).map(|a| &**a);
    let mut macs = MacCount::default();
    let mut h = x.clone();
    for layer in 0..model.num_layers() {
        let mut y = base_layer(model, layer, &h, gemm, &mut macs)?;
        macs.bypass += accumulate_bypass(&h, plan.segments(), resolve, layer, gemm, &mut y, false)?;
        model.activation().apply(&mut y);
        h = y;
    }
    Ok(ForwardOutput { output: h, macs })
}

fn delora_branch<'s, T: Scalar>(
    state: &'s ModelState<T>,
    adapters: &Adapters<T>,
) -> Result<(AdapterId, &'s Arc<LoraAdapter<T>>), LoraError> {
    let Mode::Mixture(merged) = state.mode() else {
        return Err(LoraError::ModeMismatch { expected: "mixture", actual: state.mode() });
    };
    let branch = state.delora_branch().ok_or(LoraError::MixtureIntegrity("deLoRA branch not initialised"))?;
    if branch.id() != merged {
        return Err(LoraError::MixtureIntegrity("deLoRA branch belongs to another adapter"));
    }
    if let Some(loaded) = adapters.get(&merged) {
        if !Arc::ptr_eq(loaded, branch) && !loaded.factors_bit_eq(branch) {
            return Err(LoraError::MixtureIntegrity("deLoRA weights differ from the merged adapter"));
        }
    }
    Ok((merged, branch))
}

/// Mixture mode: rows of the merged adapter use the folded weights as is;
/// every other row adds its own bypass and subtracts the deLoRA bypass,
/// i.e. `x·(W_merge − W_deLoRA + W_own) = x·(W_base + W_own)`.
pub fn forward_mixture<T: Scalar, G: Gemm<T> + ?Sized>(
    model: &BaseModel<T>,
    state: &ModelState<T>,
    x: &Matrix<T>,
    assignment: &[AdapterId],
    adapters: &Adapters<T>,
    gemm: &G,
) -> Result<ForwardOutput<T>, LoraError> {
    let (merged, branch) = delora_branch(state, adapters)?;
    check_rows(model, x, Some(assignment))?;
    check_known(assignment, adapters, Some(merged))?;
    let own = plan_batch(assignment).filter(|a| a != merged);
    let other_rows: Vec<usize> = (0..assignment.len()).filter(|&i| assignment[i] != merged).collect();
    let delora = [Segment { adapter: merged, rows: other_rows }];
    let delora: &[Segment] = if delora[0].rows.is_empty() { &[] } else { &delora };
    let resolve = |id| adapters.get(&id).map(|a| &**a);
    let resolve_branch = |_| Some(&**branch);

    let mut macs = MacCount::default();
    let mut h = x.clone();
    for layer in 0..model.num_layers() {
        let mut y = base_layer(model, layer, &h, gemm, &mut macs)?;
        macs.bypass += accumulate_bypass(&h, own.segments(), resolve, layer, gemm, &mut y, false)?;
        macs.bypass += accumulate_bypass(&h, delora, resolve_branch, layer, gemm, &mut y, true)?;
        model.activation().apply(&mut y);
        h = y;
    }
    Ok(ForwardOutput { output: h, macs })
}

/// Dispatches on the current mode. In merged mode every row must belong to
/// the merged adapter.
pub fn forward<T: Scalar, G: Gemm<T> + ?Sized>(
    model: &BaseModel<T>,
    state: &ModelState<T>,
    x: &Matrix<T>,
    assignment: &[AdapterId],
    adapters: &Adapters<T>,
    gemm: &G,
) -> Result<ForwardOutput<T>, LoraError> {
    match state.mode() {
        Mode::Unmerged => forward_unmerged(model, state, x, assignment, adapters, gemm),
        Mode::Mixture(_) => forward_mixture(model, state, x, assignment, adapters, gemm),
        Mode::Merged(a) => {
            check_rows(model, x, Some(assignment))?;
            if let Some(&other) = assignment.iter().find(|&&r| r != a) {
                return Err(LoraError::WrongAdapter { merged: a, requested: other });
            }
            forward_merged(model, state, x, gemm)
        }
    }
}

/// Output head of a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum HeadKind {
    /// Vocabulary projection; one decode round per output token.
    #[default]
    Lm,
    /// Adapter's vision task head; completes in a single round.
    Task,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Lm => "lm",
            HeadKind::Task => "task",
        }
    }
}

/// Projects hidden rows through the LM head (V×d) or the adapter's task
/// head (C×d). Returns the logits and the multiply-add count.
pub fn project_head<T: Scalar, G: Gemm<T> + ?Sized>(
    model: &BaseModel<T>,
    adapter: Option<&LoraAdapter<T>>,
    head: HeadKind,
    hidden: &Matrix<T>,
    gemm: &G,
) -> Result<(Matrix<T>, u64), LoraError> {
    let proj = match head {
        HeadKind::Lm => model.lm_head_t(),
        HeadKind::Task => {
            let a = adapter.ok_or(LoraError::InvalidModel("task head needs an adapter"))?;
            a.task_head_t().ok_or(LoraError::MissingTaskHead(a.id()))?
        }
    };
    let macs = (hidden.rows() * proj.rows() * proj.cols()) as u64;
    Ok((gemm.gemm(hidden, proj)?, macs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeRequest {
    pub adapter: AdapterId,
    pub head: HeadKind,
}

/// Runs `rounds` single-row passes through the stack plus the request's
/// head and returns each round's wall time. Task-head requests always run
/// exactly one round.
#[allow(clippy::too_many_arguments)]
pub fn decode<T: Scalar, G: Gemm<T> + ?Sized, C: Clock + ?Sized>(
    model: &BaseModel<T>,
    state: &ModelState<T>,
    request: DecodeRequest,
    rounds: usize,
    adapters: &Adapters<T>,
    gemm: &G,
    clock: &C,
) -> Result<Vec<Duration>, LoraError> {
    if rounds == 0 {
        return Err(LoraError::ZeroRounds);
    }
    let adapter = adapters.get(&request.adapter).ok_or(LoraError::UnknownAdapter(request.adapter))?;
    if request.head == HeadKind::Task && adapter.task_head().is_none() {
        return Err(LoraError::MissingTaskHead(request.adapter));
    }
    let rounds = if request.head == HeadKind::Task { 1 } else { rounds };
    let d = model.hidden_dim();
    let mut x = Matrix::from_fn(1, d, |_, j| T::from_f64(((j * 7) % 13) as f64 / 6.0 - 1.0));
    let assignment = [request.adapter];
    let mut durations = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let start = clock.now();
        let out = forward(model, state, &x, &assignment, adapters, gemm)?;
        let (logits, _) = project_head(model, Some(adapter), request.head, &out.output, gemm)?;
        core::hint::black_box(&logits);
        durations.push(clock.now().saturating_sub(start));
        x = out.output;
    }
    Ok(durations)
}
