use alloc::sync::Arc;
use core::time::Duration;

use super::adapter::LoraAdapter;
use super::model::BaseModel;
use super::state::{Mode, ModelState};
use super::LoraError;
use crate::atmm::Gemm;
use crate::clock::Clock;
use crate::matrix::{add_inplace, sub_inplace, Matrix};
use crate::scalar::Scalar;

/// `ΔW = down·up` for one layer (d×d).
pub fn delta_w<T: Scalar, G: Gemm<T> + ?Sized>(
    adapter: &LoraAdapter<T>,
    layer: usize,
    gemm: &G,
) -> Result<Matrix<T>, LoraError> {
    let l = adapter.layer(layer)?;
    Ok(gemm.gemm(&l.down, &l.up)?)
}

fn check_compatible<T: Scalar>(model: &BaseModel<T>, adapter: &LoraAdapter<T>) -> Result<(), LoraError> {
    if adapter.num_layers() != model.num_layers() || adapter.hidden_dim() != model.hidden_dim() {
        return Err(LoraError::InvalidAdapter {
            id: adapter.id(),
            reason: "layer count or hidden dimension differs from the model",
        });
    }
    Ok(())
}

/// Folds `adapter` into every layer weight in place (`W += ΔW`), computing
/// all increments at runtime. Returns the wall time of the whole pass.
pub fn merge<T: Scalar, G: Gemm<T> + ?Sized, C: Clock + ?Sized>(
    model: &mut BaseModel<T>,
    state: &mut ModelState<T>,
    adapter: &Arc<LoraAdapter<T>>,
    gemm: &G,
    clock: &C,
) -> Result<Duration, LoraError> {
    if state.mode() != Mode::Unmerged {
        return Err(LoraError::AlreadyMerged { current: state.mode() });
    }
    check_compatible(model, adapter)?;
    let start = clock.now();
    for i in 0..model.num_layers() {
        let dw = delta_w(adapter, i, gemm)?;
        add_inplace(model.layer_mut(i), &dw)?;
    }
    let elapsed = clock.now().saturating_sub(start);
    state.set_merged(adapter.id());
    Ok(elapsed)
}

/// Removes the merged adapter (`W -= ΔW`) and clears any deLoRA branch.
pub fn unmerge<T: Scalar, G: Gemm<T> + ?Sized, C: Clock + ?Sized>(
    model: &mut BaseModel<T>,
    state: &mut ModelState<T>,
    adapter: &Arc<LoraAdapter<T>>,
    gemm: &G,
    clock: &C,
) -> Result<Duration, LoraError> {
    let merged = state.mode().merged_adapter().ok_or(LoraError::NotMerged)?;
    if merged != adapter.id() {
        return Err(LoraError::WrongAdapter { merged, requested: adapter.id() });
    }
    check_compatible(model, adapter)?;
    let start = clock.now();
    for i in 0..model.num_layers() {
        let dw = delta_w(adapter, i, gemm)?;
        sub_inplace(model.layer_mut(i), &dw)?;
    }
    let elapsed = clock.now().saturating_sub(start);
    state.set_unmerged();
    Ok(elapsed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atmm::{ReferenceGemm, TiledGemm, TilingConfig, TilingTable};
    use crate::clock::ManualClock;
    use crate::lora::{Activation, AdapterId, LoraLayer, ModelDims};
    use crate::matrix::{gemm_reference, max_abs_diff};
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table() -> TilingTable {
        TilingTable::uniform(TilingConfig::from_array([32, 32, 32, 16, 16, 16]).unwrap()).unwrap()
    }

    #[test]
    fn rank_one_outer_product() {
        let d = 16;
        let down = Matrix::<f32>::from_fn(d, 1, |i, _| (i == 3) as u8 as f32);
        let up = Matrix::<f32>::from_fn(1, d, |_, j| (j == 7) as u8 as f32);
        let a = LoraAdapter::new(AdapterId(0), vec![LoraLayer { down, up }], None).unwrap();
        let dw = delta_w(&a, 0, &ReferenceGemm).unwrap();
        for i in 0..d {
            for j in 0..d {
                assert_eq!(dw.get(i, j), if (i, j) == (3, 7) { 1.0 } else { 0.0 });
            }
        }
        assert!(matches!(delta_w(&a, 1, &ReferenceGemm), Err(LoraError::LayerOutOfRange { layer: 1, layers: 1 })));
    }

    #[test]
    fn zero_and_random_delta() {
        let t = table();
        let z = LoraAdapter::<f32>::zeros(AdapterId(0), 2, 32, 4).unwrap();
        assert_eq!(delta_w(&z, 1, &TiledGemm::new(&t)).unwrap(), Matrix::zeros(32, 32));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = LoraAdapter::<f32>::random(AdapterId(1), 2, 32, 4, None, &mut rng).unwrap();
        let got = delta_w(&a, 0, &TiledGemm::new(&t)).unwrap();
        let oracle = gemm_reference(&a.layers()[0].down, &a.layers()[0].up).unwrap();
        assert!(max_abs_diff(&got, &oracle).unwrap() <= 1e-6);
    }

    /// d=2 is below the model minimum, so the toy case drives the in-place
    /// update directly through the same primitives merge uses.
    #[test]
    fn toy_merge_arithmetic() {
        let mut w = Matrix::<f32>::identity(2);
        let down = Matrix::from_rows(&[[1.0f32], [0.0]]).unwrap();
        let up = Matrix::from_rows(&[[1.0f32, 0.0]]).unwrap();
        let dw = gemm_reference(&down, &up).unwrap();
        add_inplace(&mut w, &dw).unwrap();
        assert_eq!(w, Matrix::from_rows(&[[2.0f32, 0.0], [0.0, 1.0]]).unwrap());
    }

    #[test]
    fn merge_state_machine_and_round_trip() {
        let t = table();
        let g = TiledGemm::new(&t);
        let clock = ManualClock::new(Duration::from_micros(10));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = ModelDims { num_layers: 3, hidden_dim: 32, vocab_size: 8 };
        let mut model = BaseModel::<f32>::random(dims, Activation::Softsign, &mut rng).unwrap();
        let checkpoint: Vec<Matrix<f32>> = model.layers().to_vec();
        let addrs = model.layer_addrs();
        let a = Arc::new(LoraAdapter::random(AdapterId(1), 3, 32, 8, None, &mut rng).unwrap());
        let b = Arc::new(LoraAdapter::random(AdapterId(2), 3, 32, 8, None, &mut rng).unwrap());
        let mut state = ModelState::new();

        assert!(matches!(unmerge(&mut model, &mut state, &a, &g, &clock), Err(LoraError::NotMerged)));
        let lat = merge(&mut model, &mut state, &a, &g, &clock).unwrap();
        assert_eq!(lat, Duration::from_micros(10));
        assert_eq!(state.mode(), Mode::Merged(AdapterId(1)));
        assert!(matches!(merge(&mut model, &mut state, &b, &g, &clock), Err(LoraError::AlreadyMerged { .. })));
        assert!(matches!(unmerge(&mut model, &mut state, &b, &g, &clock), Err(LoraError::WrongAdapter { .. })));
        unmerge(&mut model, &mut state, &a, &g, &clock).unwrap();
        for _ in 0..99 {
            merge(&mut model, &mut state, &a, &g, &clock).unwrap();
            unmerge(&mut model, &mut state, &a, &g, &clock).unwrap();
        }
        assert_eq!(model.layer_addrs(), addrs);
        for (w, c) in model.layers().iter().zip(&checkpoint) {
            assert!(max_abs_diff(w, c).unwrap() <= 1e-4 * c.max_abs());
        }
    }

    #[test]
    fn zero_adapter_merge_keeps_weights() {
        let t = table();
        let g = TiledGemm::new(&t);
        let clock = ManualClock::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let dims = ModelDims { num_layers: 2, hidden_dim: 16, vocab_size: 4 };
        let mut model = BaseModel::<f32>::random(dims, Activation::Identity, &mut rng).unwrap();
        let before: Vec<_> = model.layers().to_vec();
        let z = Arc::new(LoraAdapter::zeros(AdapterId(3), 2, 16, 2).unwrap());
        let mut state = ModelState::new();
        merge(&mut model, &mut state, &z, &g, &clock).unwrap();
        assert_eq!(state.mode(), Mode::Merged(AdapterId(3)));
        assert_eq!(model.layers(), &before[..]);

        let wrong = Arc::new(LoraAdapter::zeros(AdapterId(4), 3, 16, 2).unwrap());
        unmerge(&mut model, &mut state, &z, &g, &clock).unwrap();
        assert!(matches!(merge(&mut model, &mut state, &wrong, &g, &clock), Err(LoraError::InvalidAdapter { .. })));
    }
}
