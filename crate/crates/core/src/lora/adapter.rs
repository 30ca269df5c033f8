use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use super::LoraError;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AdapterId(pub u32);

impl fmt::Display for AdapterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

/// Loaded adapters by id. Shared so the deLoRA branch can alias the merged
/// adapter without copying it.
pub type Adapters<T = f32> = BTreeMap<AdapterId, Arc<LoraAdapter<T>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct LoraLayer<T = f32> {
    /// d×r
    pub down: Matrix<T>,
    /// r×d
    pub up: Matrix<T>,
}

/// A rank-r adapter: one down/up pair per model layer plus an optional
/// vision task head (C×d).
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter<T = f32> {
    id: AdapterId,
    rank: usize,
    layers: Vec<LoraLayer<T>>,
    task_head: Option<Matrix<T>>,
    task_head_t: Option<Matrix<T>>,
}

impl<T: Scalar> LoraAdapter<T> {
    pub fn new(id: AdapterId, layers: Vec<LoraLayer<T>>, task_head: Option<Matrix<T>>) -> Result<Self, LoraError> {
        let invalid = |reason| LoraError::InvalidAdapter { id, reason };
        let first = layers.first().ok_or(invalid("no layers"))?;
        let (d, rank) = first.down.shape();
        if rank >= d {
            return Err(invalid("rank must be below the hidden dimension"));
        }
        for l in &layers {
            if l.down.shape() != (d, rank) || l.up.shape() != (rank, d) {
                return Err(invalid("inconsistent down/up shapes"));
            }
        }
        if let Some(h) = &task_head {
            if h.cols() != d {
                return Err(invalid("task head must be C×d"));
            }
        }
        let task_head_t = task_head.as_ref().map(Matrix::transpose);
        Ok(Self { id, rank, layers, task_head, task_head_t })
    }

    /// Random adapter for benchmarks and tests.
    pub fn random<R: Rng + ?Sized>(
        id: AdapterId,
        num_layers: usize,
        hidden_dim: usize,
        rank: usize,
        task_classes: Option<usize>,
        rng: &mut R,
    ) -> Result<Self, LoraError> {
        let down_scale = 1.0 / libm::sqrt(hidden_dim as f64);
        let up_scale = 0.5 / libm::sqrt(rank.max(1) as f64);
        let layers = (0..num_layers)
            .map(|_| LoraLayer {
                down: Matrix::random(hidden_dim, rank, down_scale, rng),
                up: Matrix::random(rank, hidden_dim, up_scale, rng),
            })
            .collect();
        let head = task_classes.map(|c| Matrix::random(c, hidden_dim, down_scale, rng));
        Self::new(id, layers, head)
    }

    /// All-zero adapter (ΔW = 0 on every layer).
    pub fn zeros(id: AdapterId, num_layers: usize, hidden_dim: usize, rank: usize) -> Result<Self, LoraError> {
        let layers = (0..num_layers)
            .map(|_| LoraLayer { down: Matrix::zeros(hidden_dim, rank), up: Matrix::zeros(rank, hidden_dim) })
            .collect();
        Self::new(id, layers, None)
    }

    pub fn id(&self) -> AdapterId {
        self.id
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].down.rows()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LoraLayer<T>] {
        &self.layers
    }

    pub fn layer(&self, layer: usize) -> Result<&LoraLayer<T>, LoraError> {
        self.layers.get(layer).ok_or(LoraError::LayerOutOfRange { layer, layers: self.layers.len() })
    }

    pub fn task_head(&self) -> Option<&Matrix<T>> {
        self.task_head.as_ref()
    }

    /// Task head stored d×C for a plain GEMM projection.
    pub(crate) fn task_head_t(&self) -> Option<&Matrix<T>> {
        self.task_head_t.as_ref()
    }

    /// Bytes of factor storage: `L · 2·d·r · width` (task head excluded).
    pub fn factor_bytes(&self) -> usize {
        self.num_layers() * 2 * self.hidden_dim() * self.rank * T::WIDTH
    }

    /// Bytes a precomputed full-model ΔW would take: `L · d² · width`.
    pub fn delta_bytes(&self) -> usize {
        self.num_layers() * self.hidden_dim() * self.hidden_dim() * T::WIDTH
    }

    /// Bitwise equality of all factors (task heads ignored).
    pub fn factors_bit_eq(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.down.bit_eq(&b.down) && a.up.bit_eq(&b.up))
    }
}
