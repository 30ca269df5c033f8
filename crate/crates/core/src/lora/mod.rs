//! Base model, LoRA adapters, one-shot merge/unmerge and the three
//! inference modes.
//!
//! Adapters are stored as a per-layer `down` (d×r) / `up` (r×d) pair, so the
//! bypass branch of a row `x` is `(x·down)·up` and the weight increment is
//! `ΔW = down·up` (d×d).

mod adapter;
mod forward;
mod model;
mod ops;
mod state;

pub use adapter::{AdapterId, Adapters, LoraAdapter, LoraLayer};
pub use forward::{
    decode, forward, forward_merged, forward_mixture, forward_unmerged, project_head, DecodeRequest, ForwardOutput,
    HeadKind, MacCount,
};
pub use model::{Activation, BaseModel, ModelDims};
pub use ops::{delta_w, merge, unmerge};
pub use state::{Mode, ModelState};


use crate::matrix::MatrixError;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LoraError {
    #[error("invalid model: {0}")]
    InvalidModel(&'static str),
    #[error("invalid adapter {id}: {reason}")]
    InvalidAdapter { id: AdapterId, reason: &'static str },
    #[error("layer {layer} out of range (model has {layers})")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("model already has {current} folded in; unmerge first")]
    AlreadyMerged { current: Mode },
    #[error("no adapter is merged")]
    NotMerged,
    #[error("adapter {requested} is not the merged adapter {merged}")]
    WrongAdapter { merged: AdapterId, requested: AdapterId },
    #[error("operation needs {expected} mode, model is in {actual}")]
    ModeMismatch { expected: &'static str, actual: Mode },
    #[error("unknown adapter {0}")]
    UnknownAdapter(AdapterId),
    #[error("mixture mode integrity: {0}")]
    MixtureIntegrity(&'static str),
    #[error("adapter {0} has no task head")]
    MissingTaskHead(AdapterId),
    #[error("assignment has {got} rows, activations have {expected}")]
    AssignmentLength { expected: usize, got: usize },
    #[error("decode needs at least one round")]
    ZeroRounds,
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}
