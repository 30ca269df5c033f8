use alloc::sync::Arc;
use core::fmt;

use super::adapter::{AdapterId, LoraAdapter};
use super::LoraError;

/// Inference mode of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Base weights untouched; every adapter runs as a bypass branch.
    Unmerged,
    /// The adapter's ΔW is folded into the base weights.
    Merged(AdapterId),
    /// As `Merged`, plus a deLoRA branch cancelling the merged ΔW for rows
    /// of other adapters.
    Mixture(AdapterId),
}

impl Mode {
    /// The adapter folded into the weights, if any.
    pub fn merged_adapter(self) -> Option<AdapterId> {
        match self {
            Mode::Unmerged => None,
            Mode::Merged(a) | Mode::Mixture(a) => Some(a),
        }
    }

    pub fn kind(self) -> &'static str {
        match self {
            Mode::Unmerged => "unmerged",
            Mode::Merged(_) => "merged",
            Mode::Mixture(_) => "mixture",
        }
    }

    /// Whether a row of `adapter` can run in this mode without a switch.
    pub fn serves(self, adapter: AdapterId) -> bool {
        match self {
            Mode::Merged(a) => a == adapter,
            Mode::Unmerged | Mode::Mixture(_) => true,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Unmerged => write!(f, "unmerged"),
            Mode::Merged(a) => write!(f, "merged({a})"),
            Mode::Mixture(a) => write!(f, "mixture({a})"),
        }
    }
}

/// Which adapter (if any) is folded into the weights, plus the deLoRA branch.
#[derive(Debug, Clone)]
pub struct ModelState<T = f32> {
    mode: Mode,
    delora: Option<Arc<LoraAdapter<T>>>,
}

impl<T> Default for ModelState<T> {
    fn default() -> Self {
        Self { mode: Mode::Unmerged, delora: None }
    }
}

impl<T> ModelState<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn delora_branch(&self) -> Option<&Arc<LoraAdapter<T>>> {
        self.delora.as_ref()
    }

    pub(crate) fn set_merged(&mut self, id: AdapterId) {
        self.mode = Mode::Merged(id);
        self.delora = None;
    }

    pub(crate) fn set_unmerged(&mut self) {
        self.mode = Mode::Unmerged;
        self.delora = None;
    }
}

impl<T: crate::scalar::Scalar> ModelState<T> {
    /// Turns `Merged(a)` into `Mixture(a)` with a deLoRA branch aliasing the
    /// merged adapter (shared, not copied). No weight is touched.
    pub fn init_delora(&mut self, merged: Arc<LoraAdapter<T>>) -> Result<(), LoraError> {
        let id = match self.mode {
            Mode::Merged(a) | Mode::Mixture(a) => a,
            Mode::Unmerged => return Err(LoraError::NotMerged),
        };
        if merged.id() != id {
            return Err(LoraError::WrongAdapter { merged: id, requested: merged.id() });
        }
        self.mode = Mode::Mixture(id);
        self.delora = Some(merged);
        Ok(())
    }

    /// Drops the deLoRA branch: `Mixture(a)` back to `Merged(a)`.
    pub fn clear_delora(&mut self) {
        if let Mode::Mixture(a) = self.mode {
            self.mode = Mode::Merged(a);
        }
        self.delora = None;
    }
}
