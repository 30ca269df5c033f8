//! Core algorithms for a desk-scale serving runtime for low-rank adapted
//! (LoRA) models.
//!
//! The crate is `no_std` (with `alloc`). Everything that touches time goes
//! through [`clock::Clock`]; file formats, wall clocks and the command line
//! live in the `lora-serve` companion crate.
//!
//! Module map:
//!
//! * [`matrix`]: dense row-major matrices and the naive reference GEMM.
//! * [`atmm`]: adaptive-tiling GEMM, candidate enumeration, profile-based
//!   tiling search and the shape-keyed config table.
//! * [`lora`]: base model, adapters, one-shot merge/unmerge and the merged,
//!   unmerged and mixture (deLoRA) forward passes.
//! * [`batch`]: padding-free segment planning for heterogeneous adapters.
//! * [`orchestrator`]: request credits, the scheduling policy, mode switching
//!   and the continuous serving loop.
//! * [`fusion`]: accuracy-aware knowledge fusion (greedy bin packing with
//!   rollback) against a pluggable accuracy oracle.
//! * [`workload`]: synthetic request traces.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod atmm;
pub mod batch;
pub mod clock;
pub mod fusion;
pub mod lora;
pub mod matrix;
pub mod orchestrator;
pub mod scalar;
pub mod workload;

pub use atmm::{Gemm, ShapeKey, TiledGemm, TilingConfig, TilingTable};
pub use clock::Clock;
pub use matrix::{Matrix, MatrixError};
pub use scalar::Scalar;
