use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::config::{TilingConfig, TilingError};
use crate::matrix::{Matrix, MatrixError};
use crate::scalar::Scalar;

/// One register-level block of the loop nest: output rows × output columns
/// × reduction depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicroTile {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    pub depth: Range<usize>,
}

/// Receiver for the tiled loop nest. The kernel packs a B panel on
/// `begin_panel` and runs a micro-kernel on each `micro` call.
pub trait TileSink {
    fn begin_panel(&mut self, depth: Range<usize>, cols: Range<usize>);
    fn micro(&mut self, tile: &MicroTile);
}

fn clamp(start: usize, edge: usize, end: usize) -> Range<usize> {
    start..(start + edge).min(end)
}

/// Drives the two-level loop nest over rows `rows` of an `m×k · k×n`
/// product. Edge tiles are clamped, never padded.
pub fn walk_tiles<S: TileSink>(rows: Range<usize>, k: usize, n: usize, cfg: &TilingConfig, sink: &mut S) {
    for jc in (0..n).step_by(cfg.outer_n) {
        let cols = clamp(jc, cfg.outer_n, n);
        for pc in (0..k).step_by(cfg.outer_k) {
            let depth = clamp(pc, cfg.outer_k, k);
            sink.begin_panel(depth.clone(), cols.clone());
            for ic in rows.clone().step_by(cfg.outer_m) {
                let block_rows = clamp(ic, cfg.outer_m, rows.end);
                for ir in block_rows.clone().step_by(cfg.inner_m) {
                    let r = clamp(ir, cfg.inner_m, block_rows.end);
                    for jr in cols.clone().step_by(cfg.inner_n) {
                        let c = clamp(jr, cfg.inner_n, cols.end);
                        for pr in depth.clone().step_by(cfg.inner_k) {
                            sink.micro(&MicroTile {
                                rows: r.clone(),
                                cols: c.clone(),
                                depth: clamp(pr, cfg.inner_k, depth.end),
                            });
                        }
                    }
                }
            }
        }
    }
}

struct KernelSink<'a, T> {
    a: &'a [T],
    b: &'a [T],
    out: &'a mut [T],
    row_offset: usize,
    k: usize,
    n: usize,
    panel: Vec<T>,
    panel_depth: Range<usize>,
    panel_cols: Range<usize>,
}

impl<T: Scalar> TileSink for KernelSink<'_, T> {
    fn begin_panel(&mut self, depth: Range<usize>, cols: Range<usize>) {
        let w = cols.len();
        self.panel.clear();
        for p in depth.clone() {
            self.panel.extend_from_slice(&self.b[p * self.n + cols.start..p * self.n + cols.end]);
        }
        debug_assert_eq!(self.panel.len(), depth.len() * w);
        self.panel_depth = depth;
        self.panel_cols = cols;
    }

    #[inline]
    fn micro(&mut self, t: &MicroTile) {
        let pw = self.panel_cols.len();
        let c0 = t.cols.start - self.panel_cols.start;
        let w = t.cols.len();
        for i in t.rows.clone() {
            let a_row = &self.a[i * self.k..(i + 1) * self.k];
            let out_row = (i - self.row_offset) * self.n;
            let c_row = &mut self.out[out_row + t.cols.start..out_row + t.cols.end];
            for p in t.depth.clone() {
                let av = a_row[p];
                let off = (p - self.panel_depth.start) * pw + c0;
                let b_row = &self.panel[off..off + w];
                for (c, &bv) in c_row.iter_mut().zip(b_row) {
                    *c += av * bv;
                }
            }
        }
    }
}

fn check_operands<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, cfg: &TilingConfig) -> Result<(), TilingError> {
    cfg.validate()?;
    if a.cols() != b.rows() {
        return Err(MatrixError::ShapeMismatch { op: "atmm", left: a.shape(), right: b.shape() }.into());
    }
    Ok(())
}

/// Computes rows `rows` of `a·b` into `out` (a `rows.len() × b.cols()`
/// row-major buffer, overwritten). Building block for row-parallel drivers.
pub fn atmm_multiply_rows<T: Scalar>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    cfg: &TilingConfig,
    rows: Range<usize>,
    out: &mut [T],
) -> Result<(), TilingError> {
    check_operands(a, b, cfg)?;
    let (k, n) = (a.cols(), b.cols());
    assert!(rows.end <= a.rows(), "row range out of bounds");
    assert_eq!(out.len(), rows.len() * n, "output buffer size");
    out.fill(T::ZERO);
    let mut sink = KernelSink {
        a: a.as_slice(),
        b: b.as_slice(),
        out,
        row_offset: rows.start,
        k,
        n,
        panel: Vec::with_capacity(cfg.outer_k * cfg.outer_n),
        panel_depth: 0..0,
        panel_cols: 0..0,
    };
    walk_tiles(rows, k, n, cfg, &mut sink);
    Ok(())
}

/// Adaptive-tiling GEMM with an explicit config.
pub fn atmm_multiply<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, cfg: &TilingConfig) -> Result<Matrix<T>, TilingError> {
    check_operands(a, b, cfg)?;
    let (m, n) = (a.rows(), b.cols());
    let mut out = vec![T::ZERO; m * n];
    atmm_multiply_rows(a, b, cfg, 0..m, &mut out)?;
    Ok(Matrix::new(m, n, out)?)
}

struct CountingSink {
    counts: BTreeMap<(usize, usize, usize), u32>,
}

impl TileSink for CountingSink {
    fn begin_panel(&mut self, _: Range<usize>, _: Range<usize>) {}
    fn micro(&mut self, t: &MicroTile) {
        for i in t.rows.clone() {
            for j in t.cols.clone() {
                for p in t.depth.clone() {
                    *self.counts.entry((i, j, p)).or_insert(0) += 1;
                }
            }
        }
    }
}

/// Instrumented walk: how many times each `(i, j, p)` triple is visited by
/// the kernel's loop nest. Meant for small shapes.
pub fn tile_visit_counts(m: usize, k: usize, n: usize, cfg: &TilingConfig) -> BTreeMap<(usize, usize, usize), u32> {
    let mut sink = CountingSink { counts: BTreeMap::new() };
    walk_tiles(0..m, k, n, cfg, &mut sink);
    sink.counts
}
