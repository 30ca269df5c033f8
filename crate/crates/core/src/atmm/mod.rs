//! Adaptive-tiling matrix multiplication.
//!
//! A two-level blocked GEMM (cache-level outer tiles, register-level inner
//! tiles) whose blocking parameters are chosen per input shape from a table
//! produced offline by [`tiling_search`].

mod config;
mod kernel;
mod search;
mod table;

pub use config::{candidate_configs, TilingConfig, TilingError, MAX_EDGE, MIN_EDGE};
pub use kernel::{atmm_multiply, atmm_multiply_rows, tile_visit_counts, walk_tiles, MicroTile, TileSink};
pub use search::{benchmark_config, default_shape_grid, tiling_search, BenchResult, SearchFailure, SearchOutcome};
pub use table::{ShapeKey, TableEntry, TilingTable, M_BUCKET};

use crate::matrix::{gemm_reference, Matrix, MatrixError};
use crate::scalar::Scalar;

/// A matrix-multiply strategy. Model code is written against this trait so
/// the serving runtime can swap the single-threaded tiled kernel for a
/// parallel one or for the reference oracle.
pub trait Gemm<T: Scalar> {
    fn gemm(&self, a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>, MatrixError>;
}

impl<T: Scalar, G: Gemm<T> + ?Sized> Gemm<T> for &G {
    fn gemm(&self, a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>, MatrixError> {
        (**self).gemm(a, b)
    }
}

/// Tiled GEMM that looks its config up in a [`TilingTable`].
#[derive(Debug, Clone, Copy)]
pub struct TiledGemm<'a> {
    pub table: &'a TilingTable,
}

impl<'a> TiledGemm<'a> {
    pub fn new(table: &'a TilingTable) -> Self {
        Self { table }
    }
}

impl<T: Scalar> Gemm<T> for TiledGemm<'_> {
    fn gemm(&self, a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>, MatrixError> {
        let cfg = self.table.lookup(a.rows(), a.cols(), b.cols());
        atmm_multiply(a, b, &cfg).map_err(|e| match e {
            TilingError::Matrix(m) => m,
            // table configs are validated on insertion
            other => unreachable!("table holds an invalid config: {other}"),
        })
    }
}

/// The naive 64-bit-accumulating oracle as a [`Gemm`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceGemm;

impl<T: Scalar> Gemm<T> for ReferenceGemm {
    fn gemm(&self, a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>, MatrixError> {
        gemm_reference(a, b)
    }
}
