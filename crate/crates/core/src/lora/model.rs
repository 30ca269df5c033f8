use alloc::vec::Vec;

use rand::Rng;

use super::LoraError;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Elementwise nonlinearity applied after each layer's full linear sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    Identity,
    Relu,
    /// `x / (1 + |x|)`; bounded, so activations stay O(1) across layers.
    #[default]
    Softsign,
}

impl Activation {
    pub fn apply<T: Scalar>(self, m: &mut Matrix<T>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => m.as_mut_slice().iter_mut().for_each(|v| {
                if *v < T::ZERO {
                    *v = T::ZERO;
                }
            }),
            Activation::Softsign => m.as_mut_slice().iter_mut().for_each(|v| *v = *v / (T::ONE + v.abs())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { num_layers: 4, hidden_dim: 256, vocab_size: 1024 }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<(), LoraError> {
        if self.num_layers < 1 {
            return Err(LoraError::InvalidModel("need at least one layer"));
        }
        if self.hidden_dim < 16 {
            return Err(LoraError::InvalidModel("hidden dimension must be >= 16"));
        }
        if self.vocab_size < 2 {
            return Err(LoraError::InvalidModel("vocabulary must have >= 2 entries"));
        }
        Ok(())
    }
}

/// A stack of `L` d×d linear layers with a fixed nonlinearity and a V×d
/// language-modeling head. Layer storage is allocated once and only ever
/// updated in place.
#[derive(Debug, Clone)]
pub struct BaseModel<T = f32> {
    layers: Vec<Matrix<T>>,
    lm_head: Matrix<T>,
    lm_head_t: Matrix<T>,
    activation: Activation,
}

impl<T: Scalar> BaseModel<T> {
    pub fn new(layers: Vec<Matrix<T>>, lm_head: Matrix<T>, activation: Activation) -> Result<Self, LoraError> {
        let d = layers.first().map_or(0, Matrix::rows);
        ModelDims { num_layers: layers.len(), hidden_dim: d, vocab_size: lm_head.rows() }.validate()?;
        if layers.iter().any(|w| w.shape() != (d, d)) {
            return Err(LoraError::InvalidModel("layer weights must all be d×d"));
        }
        if lm_head.cols() != d {
            return Err(LoraError::InvalidModel("lm head must be V×d"));
        }
        let lm_head_t = lm_head.transpose();
        Ok(Self { layers, lm_head, lm_head_t, activation })
    }

    /// Random model with entries scaled by `1/sqrt(d)`.
    pub fn random<R: Rng + ?Sized>(dims: ModelDims, activation: Activation, rng: &mut R) -> Result<Self, LoraError> {
        dims.validate()?;
        let d = dims.hidden_dim;
        let scale = libm::sqrt(3.0 / d as f64);
        let layers = (0..dims.num_layers).map(|_| Matrix::random(d, d, scale, rng)).collect();
        let head = Matrix::random(dims.vocab_size, d, scale, rng);
        Self::new(layers, head, activation)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims { num_layers: self.layers.len(), hidden_dim: self.hidden_dim(), vocab_size: self.lm_head.rows() }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Matrix<T>] {
        &self.layers
    }

    pub(crate) fn layer_mut(&mut self, i: usize) -> &mut Matrix<T> {
        &mut self.layers[i]
    }

    pub fn lm_head(&self) -> &Matrix<T> {
        &self.lm_head
    }

    pub(crate) fn lm_head_t(&self) -> &Matrix<T> {
        &self.lm_head_t
    }

    /// Storage address of every layer; unchanged by merge/unmerge.
    pub fn layer_addrs(&self) -> Vec<usize> {
        self.layers.iter().map(Matrix::storage_addr).collect()
    }

    /// Adds `delta` to every entry of layer `i`'s weight. Test hook for
    /// fault injection.
    pub fn perturb_layer(&mut self, i: usize, delta: T) {
        self.layers[i].as_mut_slice().iter_mut().for_each(|v| *v += delta);
    }
}
