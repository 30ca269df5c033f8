//! Invariant suite behind `lora-serve verify`.

use std::sync::Arc;
use std::time::{Duration, Instant};

use lora_serve_core::atmm::{atmm_multiply, candidate_configs, tile_visit_counts, ReferenceGemm};
use lora_serve_core::fusion::{fuse, KnowledgeSource, SyntheticOracle};
use lora_serve_core::lora::{
    forward_merged, forward_mixture, forward_unmerged, merge, unmerge, Activation, AdapterId, Adapters, BaseModel,
    HeadKind, LoraAdapter, Mode, ModelDims, ModelState,
};
use lora_serve_core::matrix::{gemm_reference, max_abs_diff, scaled_tolerance};
use lora_serve_core::orchestrator::{init_delora, schedule, Request, SchedulerConfig};
use lora_serve_core::workload::{generate, AppProfile, Arrival, WorkloadSpec};
use lora_serve_core::{Matrix, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::clock::MonotonicClock;

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    pub quick: bool,
    pub seed: u64,
    /// Perturbs a base weight between the merged and unmerged passes of the
    /// mode-equivalence check, which must then fail.
    pub inject_fault: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub quick: bool,
    pub properties: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn failed(&self) -> Vec<&'static str> {
        self.properties.iter().filter(|p| !p.passed).map(|p| p.name).collect()
    }
}

const REL_TOL: f64 = 1e-4;

fn run(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> PropertyResult {
    let t = Instant::now();
    let (passed, detail) = match f() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    PropertyResult { name, passed, detail, elapsed_ms: t.elapsed().as_secs_f64() * 1e3 }
}

pub fn run_suite(opts: VerifyOptions) -> VerifyReport {
    let n = |full: usize, quick: usize| if opts.quick { quick } else { full };
    let properties = vec![
        run("atmm_oracle", || atmm_oracle(n(50, 12), 5, opts.seed)),
        run("tile_coverage", || tile_coverage(opts.seed)),
        run("delora_identity", || delora_identity(n(100, 10), opts.seed)),
        run("mode_equivalence", || mode_equivalence(n(100, 10), opts.seed, opts.inject_fault)),
        run("merge_round_trip", || merge_round_trip(n(100, 20), opts.seed)),
        run("scheduler_hand_traces", scheduler_hand_traces),
        run("fusion_decay_closed_form", fusion_decay),
        run("workload_skew", || workload_skew(opts.seed)),
    ];
    VerifyReport { passed: properties.iter().all(|p| p.passed), quick: opts.quick, properties }
}

fn within<T: Scalar>(got: &Matrix<T>, want: &Matrix<T>) -> Result<(f64, f64), String> {
    let err = max_abs_diff(got, want).map_err(|e| e.to_string())?.to_f64();
    let tol = scaled_tolerance(REL_TOL, got, want);
    Ok((err, tol))
}

/// Random shapes up to 512 per edge against the reference GEMM.
pub fn atmm_oracle(shapes: usize, configs_per_shape: usize, seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = candidate_configs(256 * 1024, 4).expect("non-empty budget");
    let mut worst = 0.0f64;
    for _ in 0..shapes {
        let (m, k, n) = (rng.random_range(1..=512), rng.random_range(1..=512), rng.random_range(1..=512));
        let a = Matrix::<f32>::random(m, k, 1.0, &mut rng);
        let b = Matrix::<f32>::random(k, n, 1.0, &mut rng);
        let want = gemm_reference(&a, &b).map_err(|e| e.to_string())?;
        for _ in 0..configs_per_shape {
            let cfg = pool[rng.random_range(0..pool.len())];
            let got = atmm_multiply(&a, &b, &cfg).map_err(|e| e.to_string())?;
            let (err, tol) = within(&got, &want)?;
            if err > tol {
                return Err(format!("shape {m}x{k}x{n} config {cfg}: error {err:e} > {tol:e}"));
            }
            worst = worst.max(err / tol);
        }
    }
    Ok(format!("{} products, worst error {:.3} of tolerance", shapes * configs_per_shape, worst))
}

/// Every (i, j, p) triple of the iteration space is visited exactly once.
pub fn tile_coverage(seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7113);
    let pool = candidate_configs(16 * 1024, 4).expect("non-empty budget");
    for _ in 0..6 {
        let (m, k, n) = (rng.random_range(1..=70), rng.random_range(1..=70), rng.random_range(1..=70));
        let cfg = pool[rng.random_range(0..pool.len())];
        let counts = tile_visit_counts(m, k, n, &cfg);
        if counts.len() != m * k * n || counts.values().any(|&c| c != 1) {
            return Err(format!("shape {m}x{k}x{n} config {cfg}: iteration space not covered exactly once"));
        }
    }
    Ok("6 shapes covered exactly once".into())
}

/// One random instance: d = 256, L = 4, three adapters with ranks up to 64.
pub fn instance(rng: &mut ChaCha8Rng) -> (BaseModel<f32>, Adapters<f32>) {
    let dims = ModelDims { num_layers: 4, hidden_dim: 256, vocab_size: 64 };
    let model = BaseModel::random(dims, Activation::Softsign, rng).expect("valid dims");
    let mut adapters = Adapters::new();
    for id in 0..3 {
        let r = rng.random_range(1..=64);
        let a = LoraAdapter::random(AdapterId(id), 4, 256, r, None, rng).expect("valid adapter");
        adapters.insert(AdapterId(id), Arc::new(a));
    }
    (model, adapters)
}

fn mixed_assignment(rng: &mut ChaCha8Rng, rows: usize) -> Vec<AdapterId> {
    (0..rows).map(|_| AdapterId(rng.random_range(0..3))).collect()
}

/// Mixture rows of non-merged adapters equal their unmerged rows.
pub fn delora_identity(instances: usize, seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xde10);
    let clock = MonotonicClock::new();
    let mut worst = 0.0f64;
    for inst in 0..instances {
        let (mut model, adapters) = instance(&mut rng);
        let rows = rng.random_range(2..24);
        let assignment = mixed_assignment(&mut rng, rows);
        let x = Matrix::<f32>::random(rows, 256, 1.0, &mut rng);
        let e = |e: lora_serve_core::lora::LoraError| e.to_string();
        let unmerged =
            forward_unmerged(&model, &ModelState::new(), &x, &assignment, &adapters, &ReferenceGemm).map_err(e)?;
        let mut st = ModelState::new();
        merge(&mut model, &mut st, &adapters[&AdapterId(0)], &ReferenceGemm, &clock).map_err(e)?;
        init_delora(&mut st, &adapters).map_err(e)?;
        let mixture = forward_mixture(&model, &st, &x, &assignment, &adapters, &ReferenceGemm).map_err(e)?;
        let others: Vec<usize> = (0..rows).filter(|&i| assignment[i] != AdapterId(0)).collect();
        if others.is_empty() {
            continue;
        }
        let (err, tol) = within(&mixture.output.gather_rows(&others), &unmerged.output.gather_rows(&others))?;
        if err > tol {
            return Err(format!("instance {inst}: mixture vs unmerged error {err:e} > {tol:e}"));
        }
        worst = worst.max(err / tol);
    }
    Ok(format!("{instances} instances, worst error {worst:.3} of tolerance"))
}

/// Merged forward equals unmerged forward for a single adapter.
pub fn mode_equivalence(instances: usize, seed: u64, inject_fault: bool) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0e9);
    let clock = MonotonicClock::new();
    let mut worst = 0.0f64;
    for inst in 0..instances {
        let (mut model, adapters) = instance(&mut rng);
        let rows = rng.random_range(1..24);
        let id = AdapterId(rng.random_range(0..3));
        let assignment = vec![id; rows];
        let x = Matrix::<f32>::random(rows, 256, 1.0, &mut rng);
        let e = |e: lora_serve_core::lora::LoraError| e.to_string();
        let unmerged =
            forward_unmerged(&model, &ModelState::new(), &x, &assignment, &adapters, &ReferenceGemm).map_err(e)?;
        let mut st = ModelState::new();
        merge(&mut model, &mut st, &adapters[&id], &ReferenceGemm, &clock).map_err(e)?;
        if inject_fault {
            model.perturb_layer(0, 0.05);
        }
        let merged = forward_merged(&model, &st, &x, &ReferenceGemm).map_err(e)?;
        let (err, tol) = within(&merged.output, &unmerged.output)?;
        if err > tol {
            return Err(format!("instance {inst}: merged vs unmerged error {err:e} > {tol:e}"));
        }
        worst = worst.max(err / tol);
    }
    Ok(format!("{instances} instances, worst error {worst:.3} of tolerance"))
}

/// Repeated merge/unmerge drifts by at most 1e-4 of the largest weight and
/// never reallocates layer storage.
pub fn merge_round_trip(cycles: usize, seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4077);
    let (mut model, adapters) = instance(&mut rng);
    let clock = MonotonicClock::new();
    let before = model.layers().to_vec();
    let addrs = model.layer_addrs();
    let a = &adapters[&AdapterId(2)];
    let mut st = ModelState::new();
    for _ in 0..cycles {
        merge(&mut model, &mut st, a, &ReferenceGemm, &clock).map_err(|e| e.to_string())?;
        unmerge(&mut model, &mut st, a, &ReferenceGemm, &clock).map_err(|e| e.to_string())?;
    }
    if model.layer_addrs() != addrs {
        return Err("layer storage was reallocated".into());
    }
    let mut worst = 0.0f64;
    for (w, w0) in model.layers().iter().zip(&before) {
        let drift = max_abs_diff(w, w0).map_err(|e| e.to_string())?.to_f64();
        let bound = REL_TOL * w0.max_abs().to_f64();
        if drift > bound {
            return Err(format!("drift {drift:e} > {bound:e} after {cycles} cycles"));
        }
        worst = worst.max(drift / bound);
    }
    Ok(format!("{cycles} cycles, worst drift {worst:.3} of bound, addresses stable"))
}

fn hand_request(id: u64, adapter: u32, starving: bool, theta: Duration) -> Request {
    let mut r = Request::new(id, AdapterId(adapter), Duration::from_millis(id), 16, 4, HeadKind::Lm);
    r.credit = if starving { theta * 2 } else { Duration::ZERO };
    r
}

/// Name, queue, current mode, expected mode, expected batch ids.
pub type HandTrace = (&'static str, Vec<Request>, Mode, Mode, Vec<u64>);

/// The three documented scheduling scenarios.
pub fn hand_traces() -> Vec<HandTrace> {
    let theta = Duration::from_millis(50);
    let r = |id, a, s| hand_request(id, a, s, theta);
    let merge_case = vec![
        r(0, 1, false),
        r(1, 1, false),
        r(2, 2, false),
        r(3, 1, false),
        r(4, 1, false),
        r(5, 2, false),
        r(6, 1, false),
        r(7, 1, false),
    ];
    let mixture_case = vec![
        r(0, 1, false),
        r(1, 2, true),
        r(2, 1, false),
        r(3, 1, false),
        r(4, 2, true),
        r(5, 1, false),
        r(6, 1, false),
    ];
    let unmerge_case = vec![
        r(0, 1, true),
        r(1, 2, true),
        r(2, 1, false),
        r(3, 3, true),
        r(4, 4, true),
        r(5, 2, true),
        r(6, 1, false),
        r(7, 5, false),
        r(8, 1, false),
    ];
    vec![
        ("merge", merge_case, Mode::Unmerged, Mode::Merged(AdapterId(1)), vec![0, 1, 3, 4, 6, 7]),
        ("mixture", mixture_case, Mode::Merged(AdapterId(1)), Mode::Mixture(AdapterId(1)), vec![1, 4, 0, 2, 3, 5, 6]),
        ("unmerge", unmerge_case, Mode::Merged(AdapterId(1)), Mode::Unmerged, vec![0, 1, 3, 4, 5, 2, 6, 7]),
    ]
}

pub const HAND_TRACE_THETA: Duration = Duration::from_millis(50);

pub fn scheduler_hand_traces() -> Result<String, String> {
    let cfg = SchedulerConfig::new(8, HAND_TRACE_THETA).expect("valid config");
    for (name, queue, mode, want_mode, want_ids) in hand_traces() {
        let d = schedule(&queue, mode, &cfg);
        let ids: Vec<u64> = d.batch.iter().map(|&i| queue[i].id).collect();
        if d.mode != want_mode || ids != want_ids {
            return Err(format!("{name}: got ({}, {ids:?}), expected ({want_mode}, {want_ids:?})", d.mode));
        }
    }
    Ok("merge, mixture and unmerge branches match".into())
}

pub fn fusion_decay() -> Result<String, String> {
    let oracle = SyntheticOracle::decay(1.0, 0.05).map_err(|e| e.to_string())?;
    for n in 1..=12u32 {
        let src: Vec<KnowledgeSource> = (0..n).map(|i| KnowledgeSource::new(i, i, "image", 0.87)).collect();
        let plan = fuse(&src, &oracle, u64::from(n)).map_err(|e| e.to_string())?;
        if plan.num_adapters() as u32 != n.div_ceil(2) {
            return Err(format!("{n} sources gave {} adapters, expected {}", plan.num_adapters(), n.div_ceil(2)));
        }
    }
    Ok("ceil(N/2) adapters for N = 1..12".into())
}

pub fn workload_skew(seed: u64) -> Result<String, String> {
    let spec = WorkloadSpec {
        duration: Duration::from_secs(10),
        rate: 1000.0,
        arrival: Arrival::Uniform,
        num_adapters: 10,
        skewness: 0.9,
        mix: vec![(AppProfile::vqa(), 1.0)],
        seed,
    };
    let t = generate(&spec).map_err(|e| e.to_string())?;
    let share = t.iter().filter(|r| r.adapter == AdapterId(0)).count() as f64 / t.len() as f64;
    if (share - 0.9).abs() > 0.02 {
        return Err(format!("hot share {share:.4} over {} requests", t.len()));
    }
    Ok(format!("hot share {share:.4} over {} requests", t.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let r = run_suite(VerifyOptions { quick: true, seed: 1, inject_fault: false });
        assert!(r.passed, "{:?}", r.properties);
    }

    #[test]
    fn injected_fault_named() {
        let r = run_suite(VerifyOptions { quick: true, seed: 1, inject_fault: true });
        assert!(!r.passed);
        assert_eq!(r.failed(), vec!["mode_equivalence"]);
    }
}
