use std::num::NonZeroUsize;
use std::sync::Arc;
use std::thread;

use lora_serve_core::atmm::atmm_multiply_rows;
use lora_serve_core::matrix::MatrixError;
use lora_serve_core::{Gemm, Matrix, Scalar, TilingTable};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "LORA_SERVE_THREADS";

/// Below this many multiply-adds a GEMM runs on the calling thread.
const PARALLEL_MIN_MACS: usize = 1 << 21;

/// Thread count from [`THREADS_ENV`], else the available parallelism.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, NonZeroUsize::get))
}

/// Row-parallel tiled GEMM: output rows are split into blocks aligned to
/// the config's outer M edge and computed on scoped threads.
#[derive(Debug, Clone)]
pub struct ParallelGemm {
    table: Arc<TilingTable>,
    threads: usize,
}

impl ParallelGemm {
    pub fn new(table: Arc<TilingTable>, threads: usize) -> Self {
        Self { table, threads: threads.max(1) }
    }

    pub fn from_env(table: Arc<TilingTable>) -> Self {
        Self::new(table, threads_from_env())
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn table(&self) -> &TilingTable {
        &self.table
    }
}

impl<T: Scalar + Send + Sync> Gemm<T> for ParallelGemm {
    fn gemm(&self, a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>, MatrixError> {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let cfg = self.table.lookup(m, k, n);
        let unwrap = |e| match e {
            lora_serve_core::atmm::TilingError::Matrix(m) => m,
            other => unreachable!("table holds an invalid config: {other}"),
        };
        let blocks = m.div_ceil(cfg.outer_m);
        let workers = self.threads.min(blocks);
        let mut out = vec![T::ZERO; m * n];
        if workers <= 1 || m * k * n < PARALLEL_MIN_MACS {
            atmm_multiply_rows(a, b, &cfg, 0..m, &mut out).map_err(unwrap)?;
            return Matrix::new(m, n, out);
        }
        let rows_per = blocks.div_ceil(workers) * cfg.outer_m;
        thread::scope(|s| {
            let handles: Vec<_> = out
                .chunks_mut(rows_per * n)
                .enumerate()
                .map(|(i, chunk)| {
                    let start = i * rows_per;
                    let rows = start..start + chunk.len() / n;
                    s.spawn(move || atmm_multiply_rows(a, b, &cfg, rows, chunk))
                })
                .collect();
            handles.into_iter().try_for_each(|h| h.join().expect("gemm worker panicked"))
        })
        .map_err(unwrap)?;
        Matrix::new(m, n, out)
    }
}
