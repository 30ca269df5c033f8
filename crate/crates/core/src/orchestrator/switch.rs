use alloc::sync::Arc;
use core::time::Duration;

use crate::atmm::Gemm;
use crate::clock::Clock;
use crate::lora::{merge, unmerge, AdapterId, Adapters, BaseModel, LoraAdapter, LoraError, Mode, ModelState};
use crate::scalar::Scalar;

/// Measured cost of one mode switch, broken down by step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SwitchReport {
    pub latency: Duration,
    pub merge: Option<Duration>,
    pub unmerge: Option<Duration>,
    pub delora_setup: Option<Duration>,
}

impl SwitchReport {
    pub fn wrote_weights(&self) -> bool {
        self.merge.is_some() || self.unmerge.is_some()
    }
}

fn lookup<T>(adapters: &Adapters<T>, id: AdapterId) -> Result<&Arc<LoraAdapter<T>>, LoraError> {
    adapters.get(&id).ok_or(LoraError::UnknownAdapter(id))
}

/// Points the deLoRA branch at the merged adapter, turning `Merged(a)` into
/// `Mixture(a)` without touching any weight.
pub fn init_delora<T: Scalar>(state: &mut ModelState<T>, adapters: &Adapters<T>) -> Result<(), LoraError> {
    let a = state.mode().merged_adapter().ok_or(LoraError::NotMerged)?;
    state.init_delora(Arc::clone(lookup(adapters, a)?))
}

/// Moves `state` (and the weights) to `to` with the fewest merge and
/// unmerge passes. Merged and mixture modes of the same adapter convert
/// without weight writes.
pub fn mode_switch<T: Scalar, G: Gemm<T> + ?Sized, C: Clock + ?Sized>(
    model: &mut BaseModel<T>,
    state: &mut ModelState<T>,
    to: Mode,
    adapters: &Adapters<T>,
    gemm: &G,
    clock: &C,
) -> Result<SwitchReport, LoraError> {
    let from = state.mode();
    let mut report = SwitchReport::default();
    if from == to {
        return Ok(report);
    }
    if let Some(target) = to.merged_adapter() {
        lookup(adapters, target)?;
    }
    let start = clock.now();
    if let Some(cur) = from.merged_adapter() {
        if Some(cur) != to.merged_adapter() {
            report.unmerge = Some(unmerge(model, state, lookup(adapters, cur)?, gemm, clock)?);
        }
    }
    if let Some(target) = to.merged_adapter() {
        if state.mode() == Mode::Unmerged {
            report.merge = Some(merge(model, state, lookup(adapters, target)?, gemm, clock)?);
        }
        match to {
            Mode::Mixture(_) if matches!(state.mode(), Mode::Merged(_)) => {
                let t0 = clock.now();
                init_delora(state, adapters)?;
                report.delora_setup = Some(clock.now().saturating_sub(t0));
            }
            Mode::Merged(_) => state.clear_delora(),
            _ => {}
        }
    }
    report.latency = clock.now().saturating_sub(start);
    debug_assert_eq!(state.mode(), to);
    Ok(report)
}
