//! Padding-free batching of heterogeneous adapters.
//!
//! Batch rows are grouped by adapter into segments; each segment is gathered
//! into a dense sub-matrix, pushed through two small GEMMs
//! (`n_seg×d · d×r`, then `n_seg×r · r×d`) and scattered back. No row is
//! ever padded to a common rank or length.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::atmm::Gemm;
use crate::lora::{AdapterId, Adapters, LoraAdapter, LoraError};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Rows of one adapter, in original batch order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub adapter: AdapterId,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchPlan {
    segments: Vec<Segment>,
    total_rows: usize,
}

impl BatchPlan {
    /// Segments in ascending adapter id.
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_rows(&self) -> usize {
        self.total_rows
    }

    /// Restricts the plan to the segments whose adapter satisfies `keep`.
    /// `total_rows` is unchanged; skipped rows get no bypass contribution.
    pub fn filter(&self, mut keep: impl FnMut(AdapterId) -> bool) -> BatchPlan {
        BatchPlan {
            segments: self.segments.iter().filter(|s| keep(s.adapter)).cloned().collect(),
            total_rows: self.total_rows,
        }
    }
}

/// Stable grouping of batch rows by adapter.
pub fn plan_batch(assignment: &[AdapterId]) -> BatchPlan {
    let mut groups: BTreeMap<AdapterId, Vec<usize>> = BTreeMap::new();
    for (row, &a) in assignment.iter().enumerate() {
        groups.entry(a).or_default().push(row);
    }
    BatchPlan {
        segments: groups.into_iter().map(|(adapter, rows)| Segment { adapter, rows }).collect(),
        total_rows: assignment.len(),
    }
}

/// Adds (or subtracts) the bypass output of every segment into the matching
/// rows of `target`. `resolve` maps a segment's adapter id to its factors.
/// Returns the multiply-add count.
pub fn accumulate_bypass<'a, T: Scalar, G: Gemm<T> + ?Sized>(
    x: &Matrix<T>,
    segments: &[Segment],
    resolve: impl Fn(AdapterId) -> Option<&'a LoraAdapter<T>>,
    layer: usize,
    gemm: &G,
    target: &mut Matrix<T>,
    subtract: bool,
) -> Result<u64, LoraError> {
    let d = x.cols();
    let mut macs = 0u64;
    for seg in segments {
        let adapter = resolve(seg.adapter).ok_or(LoraError::UnknownAdapter(seg.adapter))?;
        let factors = adapter.layer(layer)?;
        let xs = x.gather_rows(&seg.rows);
        let low = gemm.gemm(&xs, &factors.down)?;
        let ys = gemm.gemm(&low, &factors.up)?;
        let (n, r) = (seg.rows.len() as u64, adapter.rank() as u64);
        macs += n * d as u64 * r + n * r * d as u64;
        for (local, &row) in seg.rows.iter().enumerate() {
            let dst = target.row_mut(row);
            let src = ys.row(local);
            if subtract {
                dst.iter_mut().zip(src).for_each(|(t, &s)| *t -= s);
            } else {
                dst.iter_mut().zip(src).for_each(|(t, &s)| *t += s);
            }
        }
    }
    Ok(macs)
}

#[derive(Debug, Clone)]
pub struct BypassOutput<T = f32> {
    /// Row `i` holds `(x_i·down_{a(i)})·up_{a(i)}`.
    pub output: Matrix<T>,
    pub macs: u64,
}

/// Bypass branch of every row for one layer.
pub fn run_bypass<T: Scalar, G: Gemm<T> + ?Sized>(
    x: &Matrix<T>,
    plan: &BatchPlan,
    adapters: &Adapters<T>,
    layer: usize,
    gemm: &G,
) -> Result<BypassOutput<T>, LoraError> {
    if x.rows() != plan.total_rows() {
        return Err(LoraError::AssignmentLength { expected: x.rows(), got: plan.total_rows() });
    }
    let mut output = Matrix::zeros(x.rows(), x.cols());
    let macs =
        accumulate_bypass(x, plan.segments(), |id| adapters.get(&id).map(|a| &**a), layer, gemm, &mut output, false)?;
    Ok(BypassOutput { output, macs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atmm::{TiledGemm, TilingConfig, TilingTable};
    use crate::matrix::{approx_eq, gemm_reference};
    use alloc::sync::Arc;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ids(v: &[u32]) -> Vec<AdapterId> {
        v.iter().map(|&i| AdapterId(i)).collect()
    }

    fn table() -> TilingTable {
        TilingTable::uniform(TilingConfig::from_array([32, 32, 32, 16, 16, 16]).unwrap()).unwrap()
    }

    fn adapters(ranks: &[usize], d: usize, rng: &mut ChaCha8Rng) -> Adapters<f32> {
        ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let id = AdapterId(i as u32);
                (id, Arc::new(LoraAdapter::random(id, 2, d, r, None, rng).unwrap()))
            })
            .collect()
    }

    /// Row-by-row brute force.
    fn row_oracle(x: &Matrix<f32>, assignment: &[AdapterId], ad: &Adapters<f32>, layer: usize) -> Matrix<f32> {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for (i, a) in assignment.iter().enumerate() {
            let l = &ad[a].layers()[layer];
            let xi = x.gather_rows(&[i]);
            let yi = gemm_reference(&gemm_reference(&xi, &l.down).unwrap(), &l.up).unwrap();
            out.row_mut(i).copy_from_slice(yi.row(0));
        }
        out
    }

    #[test]
    fn grouping_examples() {
        let p = plan_batch(&ids(&[4, 4, 4]));
        assert_eq!(p.segments(), &[Segment { adapter: AdapterId(4), rows: vec![0, 1, 2] }]);

        let p = plan_batch(&ids(&[1, 0, 1, 0]));
        assert_eq!(
            p.segments(),
            &[Segment { adapter: AdapterId(0), rows: vec![1, 3] }, Segment { adapter: AdapterId(1), rows: vec![0, 2] },]
        );

        let p = plan_batch(&ids(&[5, 3, 9, 1]));
        assert_eq!(p.segments().len(), 4);
        assert!(p.segments().iter().all(|s| s.rows.len() == 1));
        assert_eq!(p.total_rows(), 4);
    }

    #[test]
    fn zero_adapters_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z: Adapters<f32> =
            [(AdapterId(0), Arc::new(LoraAdapter::zeros(AdapterId(0), 1, 32, 4).unwrap()))].into_iter().collect();
        let x = Matrix::random(5, 32, 1.0, &mut rng);
        let t = table();
        let out = run_bypass(&x, &plan_batch(&ids(&[0; 5])), &z, 0, &TiledGemm::new(&t)).unwrap();
        assert_eq!(out.output, Matrix::zeros(5, 32));
    }

    #[test]
    fn mac_count_is_padding_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 48;
        let ad = adapters(&[4, 16, 8], d, &mut rng);
        let assignment = ids(&[0, 1, 1, 2, 0, 1, 2, 2, 2]);
        let x = Matrix::random(assignment.len(), d, 1.0, &mut rng);
        let t = table();
        let out = run_bypass(&x, &plan_batch(&assignment), &ad, 1, &TiledGemm::new(&t)).unwrap();
        // Σ n_seg · 2·d·r multiply-adds, each rank on its own shape
        let expected = (2 * 4 + 3 * 16 + 4 * 8) * 2 * d as u64;
        assert_eq!(out.macs, expected);
        assert!(approx_eq(&out.output, &row_oracle(&x, &assignment, &ad, 1), 1e-5));
    }

    #[test]
    fn unknown_adapter_and_row_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ad = adapters(&[4], 32, &mut rng);
        let x = Matrix::random(2, 32, 1.0, &mut rng);
        let t = table();
        let g = TiledGemm::new(&t);
        assert!(matches!(
            run_bypass(&x, &plan_batch(&ids(&[0, 7])), &ad, 0, &g),
            Err(LoraError::UnknownAdapter(AdapterId(7)))
        ));
        assert!(matches!(run_bypass(&x, &plan_batch(&ids(&[0])), &ad, 0, &g), Err(LoraError::AssignmentLength { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn matches_row_oracle_and_is_permutation_equivariant(
            seed in any::<u64>(),
            raw in proptest::collection::vec(0u32..4, 1..24),
            perm_seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 32;
            let ad = adapters(&[2, 8, 16, 4], d, &mut rng);
            let assignment = ids(&raw);
            let x = Matrix::random(assignment.len(), d, 1.0, &mut rng);
            let t = table();
            let g = TiledGemm::new(&t);
            let out = run_bypass(&x, &plan_batch(&assignment), &ad, 0, &g).unwrap();
            prop_assert!(approx_eq(&out.output, &row_oracle(&x, &assignment, &ad, 0), 1e-5));

            let mut perm: Vec<usize> = (0..assignment.len()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
            let xp = x.gather_rows(&perm);
            let ap: Vec<AdapterId> = perm.iter().map(|&i| assignment[i]).collect();
            let outp = run_bypass(&xp, &plan_batch(&ap), &ad, 0, &g).unwrap();
            prop_assert_eq!(outp.macs, out.macs);
            for (new, &old) in perm.iter().enumerate() {
                prop_assert_eq!(outp.output.row(new), out.output.row(old));
            }
        }

        #[test]
        fn macs_independent_of_adapter_count(rows_per in 1usize..6, spread in 1usize..5) {
            // same per-adapter row counts, equal ranks: spreading the rows
            // over more adapters adds no work
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let d = 32;
            let ad = adapters(&[8, 8, 8, 8, 8], d, &mut rng);
            let total = rows_per * spread;
            let x = Matrix::random(total, d, 1.0, &mut rng);
            let t = table();
            let g = TiledGemm::new(&t);
            let one: Vec<AdapterId> = vec![AdapterId(0); total];
            let many: Vec<AdapterId> = (0..total).map(|i| AdapterId((i % spread) as u32)).collect();
            let a = run_bypass(&x, &plan_batch(&one), &ad, 0, &g).unwrap();
            let b = run_bypass(&x, &plan_batch(&many), &ad, 0, &g).unwrap();
            prop_assert_eq!(a.macs, b.macs);
        }
    }
}
