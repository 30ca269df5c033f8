use alloc::vec::Vec;
use core::fmt;

use crate::matrix::MatrixError;

/// Smallest legal tile edge.
pub const MIN_EDGE: usize = 16;
/// Largest edge produced by [`candidate_configs`].
pub const MAX_EDGE: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TilingError {
    #[error("tile edge {name}={value} must be a power of two >= 16")]
    InvalidEdge { name: &'static str, value: usize },
    #[error("inner tile {inner} does not divide outer tile {outer} on axis {axis}")]
    NotDivisible { axis: char, outer: usize, inner: usize },
    #[error("no feasible tiling config within a {budget_bytes}-byte cache budget")]
    NoFeasibleConfig { budget_bytes: usize },
    #[error("benchmark needs at least 3 trials, got {0}")]
    TooFewTrials(usize),
    #[error("tiling search produced no results")]
    EmptySearch,
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Six blocking edges of the two-level tiled loop nest. Field order is the
/// lexicographic order used for deterministic tie-breaking and matches the
/// `(a, b, c, d, e, f)` tuple notation: outer (m, n, k), then inner (m, n, k).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TilingConfig {
    pub outer_m: usize,
    pub outer_n: usize,
    pub outer_k: usize,
    pub inner_m: usize,
    pub inner_n: usize,
    pub inner_k: usize,
}

impl fmt::Debug for TilingConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d, e, g] = self.to_array();
        write!(f, "({a}, {b}, {c}, {d}, {e}, {g})")
    }
}

impl fmt::Display for TilingConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl TilingConfig {
    /// Validated constructor (edge and divisibility rules; the cache budget
    /// is checked separately by [`TilingConfig::fits`]).
    pub fn new(
        outer_m: usize,
        outer_n: usize,
        outer_k: usize,
        inner_m: usize,
        inner_n: usize,
        inner_k: usize,
    ) -> Result<Self, TilingError> {
        let cfg = Self { outer_m, outer_n, outer_k, inner_m, inner_n, inner_k };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_array(v: [usize; 6]) -> Result<Self, TilingError> {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn to_array(&self) -> [usize; 6] {
        [self.outer_m, self.outer_n, self.outer_k, self.inner_m, self.inner_n, self.inner_k]
    }

    /// Same edge everywhere.
    pub fn uniform(edge: usize) -> Result<Self, TilingError> {
        Self::new(edge, edge, edge, edge, edge, edge)
    }

    pub fn validate(&self) -> Result<(), TilingError> {
        let names = ["outer_m", "outer_n", "outer_k", "inner_m", "inner_n", "inner_k"];
        for (name, value) in names.into_iter().zip(self.to_array()) {
            if value < MIN_EDGE || !value.is_power_of_two() {
                return Err(TilingError::InvalidEdge { name, value });
            }
        }
        for (axis, outer, inner) in
            [('m', self.outer_m, self.inner_m), ('n', self.outer_n, self.inner_n), ('k', self.outer_k, self.inner_k)]
        {
            if outer % inner != 0 {
                return Err(TilingError::NotDivisible { axis, outer, inner });
            }
        }
        Ok(())
    }

    /// Elements resident for one outer tile: A block + B block + C block.
    pub fn footprint_elements(&self) -> usize {
        self.outer_m * self.outer_k + self.outer_k * self.outer_n + self.outer_m * self.outer_n
    }

    pub fn fits(&self, cache_budget_bytes: usize, scalar_width: usize) -> bool {
        self.footprint_elements() * scalar_width <= cache_budget_bytes
    }
}

fn pow2_edges() -> impl Iterator<Item = usize> + Clone {
    core::iter::successors(Some(MIN_EDGE), |e| Some(e * 2)).take_while(|&e| e <= MAX_EDGE)
}

/// Every power-of-two config with edges in `[16, 256]` that satisfies the
/// divisibility and footprint constraints, in lexicographic order.
pub fn candidate_configs(cache_budget_bytes: usize, scalar_width: usize) -> Result<Vec<TilingConfig>, TilingError> {
    let mut out = Vec::new();
    for om in pow2_edges() {
        for on in pow2_edges() {
            for ok in pow2_edges() {
                let outer = TilingConfig {
                    outer_m: om,
                    outer_n: on,
                    outer_k: ok,
                    inner_m: MIN_EDGE,
                    inner_n: MIN_EDGE,
                    inner_k: MIN_EDGE,
                };
                if !outer.fits(cache_budget_bytes, scalar_width) {
                    continue;
                }
                for im in pow2_edges().take_while(|&e| e <= om) {
                    for inn in pow2_edges().take_while(|&e| e <= on) {
                        for ik in pow2_edges().take_while(|&e| e <= ok) {
                            out.push(TilingConfig { inner_m: im, inner_n: inn, inner_k: ik, ..outer });
                        }
                    }
                }
            }
        }
    }
    if out.is_empty() {
        return Err(TilingError::NoFeasibleConfig { budget_bytes: cache_budget_bytes });
    }
    Ok(out)
}
