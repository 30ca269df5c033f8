//! Std companion to `lora-serve-core`: a wall clock, a row-parallel GEMM,
//! the file formats, the verification suite and the command-line front end.

pub mod cli;
pub mod clock;
pub mod config;
pub mod io;
pub mod par;
pub mod verify;

pub use clock::MonotonicClock;
pub use par::{ParallelGemm, THREADS_ENV};
