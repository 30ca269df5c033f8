//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. `ACCEPTANCE_ONLY=3,7` restricts the run to the listed criteria.
//!
//! Timing-based criteria use the single-threaded tiled GEMM and take the
//! median over interleaved repetitions.

use std::sync::Arc;
use std::time::{Duration, Instant};

use lora_serve::io::fixtures::synthetic_model;
use lora_serve::io::metrics_file::write_metrics;
use lora_serve::MonotonicClock;
use lora_serve_core::atmm::{
    atmm_multiply, candidate_configs, default_shape_grid, tiling_search, ShapeKey, TiledGemm, TilingConfig, TilingTable,
};
use lora_serve_core::fusion::{
    fuse, fuse_detailed, validate_plan, AccuracyOracle, KnowledgeSource, OracleModel, OracleNoise, SyntheticOracle,
};
use lora_serve_core::lora::{
    forward_merged, forward_mixture, forward_unmerged, merge, unmerge, Activation, AdapterId, Adapters, BaseModel,
    HeadKind, LoraAdapter, Mode, ModelDims, ModelState,
};
use lora_serve_core::orchestrator::{
    init_delora, schedule, serve_loop, Metrics, ModePolicy, Request, SchedulerConfig, ServeConfig, ThetaPolicy,
};
use lora_serve_core::workload::{generate, AppProfile, Arrival, LenDist, WorkloadSpec};
use lora_serve_core::Matrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REL: f64 = 1e-4;
const SERVE_TILING: [usize; 6] = [32, 64, 64, 16, 32, 32];

struct Verdict {
    passed: bool,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Verdict {
    Verdict { passed: true, detail: detail.into() }
}

fn fail(detail: impl Into<String>) -> Verdict {
    Verdict { passed: false, detail: detail.into() }
}

fn main() {
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    type Criterion = (u32, &'static str, fn() -> Verdict);
    let criteria: [Criterion; 12] = [
        (1, "atmm oracle equivalence", c1_atmm_oracle),
        (2, "delora identity", c2_delora_identity),
        (3, "mode equivalence", c3_mode_equivalence),
        (4, "merge/unmerge round trip", c4_round_trip),
        (5, "scheduler hand traces", c5_hand_traces),
        (6, "starvation bound", c6_starvation),
        (7, "merged vs unmerged throughput", c7_throughput),
        (8, "auto mode benefit", c8_auto_mode),
        (9, "tiling search optimality", c9_tiling_search),
        (10, "fusion planner", c10_fusion),
        (11, "vision task head", c11_task_head),
        (12, "metric formula", c12_metric_formula),
    ];
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let v = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            fail(format!("panicked: {msg}"))
        });
        println!(
            "criterion {id:>2} {name}: {} ({}) [{:.1}s]",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
        if !v.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}

/// Triple-loop product in f64, independent of the crate's kernels.
fn oracle_gemm(a: &Matrix<f32>, b: &Matrix<f32>) -> Vec<f64> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        for p in 0..k {
            let x = f64::from(a.get(i, p));
            for j in 0..n {
                out[i * n + j] += x * f64::from(b.get(p, j));
            }
        }
    }
    out
}

/// `(max |a - b|, 1e-4 · max(1, max |entry|))`
fn compare(a: &Matrix<f32>, b: &Matrix<f32>) -> (f64, f64) {
    assert_eq!(a.shape(), b.shape());
    let mut err = 0.0f64;
    let mut mag = 1.0f64;
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        err = err.max((f64::from(*x) - f64::from(*y)).abs());
        mag = mag.max(f64::from(x.abs())).max(f64::from(y.abs()));
    }
    (err, REL * mag)
}

fn c1_atmm_oracle() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let pool = candidate_configs(256 * 1024, 4).expect("candidates");
    let (shapes, configs) = (50, 5);
    let mut worst = 0.0f64;
    for s in 0..shapes {
        let (m, k, n) = (rng.random_range(1..=512), rng.random_range(1..=512), rng.random_range(1..=512));
        let a = Matrix::<f32>::random(m, k, 1.0, &mut rng);
        let b = Matrix::<f32>::random(k, n, 1.0, &mut rng);
        let want = oracle_gemm(&a, &b);
        let mag = want.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        for cfg in pool.choose_multiple(&mut rng, configs) {
            let got = atmm_multiply(&a, &b, cfg).expect("valid operands");
            let err = got.as_slice().iter().zip(&want).fold(0.0f64, |acc, (g, w)| acc.max((f64::from(*g) - w).abs()));
            if err > REL * mag {
                return fail(format!("shape #{s} {m}x{k}x{n} config {cfg}: error {err:e} > {:e}", REL * mag));
            }
            worst = worst.max(err / (REL * mag));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let detail =
        format!("{shapes} shapes x {configs} configs, worst error {worst:.3} of tolerance, {secs:.1}s of 120s");
    if secs < 120.0 {
        pass(detail)
    } else {
        fail(detail)
    }
}

struct Instance {
    model: BaseModel<f32>,
    adapters: Adapters<f32>,
    x: Matrix<f32>,
    assignment: Vec<AdapterId>,
}

/// d = 256, L = 4, three adapters of rank 1..=64, a mixed batch.
fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = ModelDims { num_layers: 4, hidden_dim: 256, vocab_size: 32 };
    let model = BaseModel::random(dims, Activation::Softsign, &mut rng).expect("model");
    let mut adapters = Adapters::new();
    for id in 0..3 {
        let r = rng.random_range(1..=64);
        adapters.insert(
            AdapterId(id),
            Arc::new(LoraAdapter::random(AdapterId(id), 4, 256, r, None, &mut rng).expect("adapter")),
        );
    }
    let rows = rng.random_range(3..=16);
    let mut assignment: Vec<AdapterId> = (0..rows).map(|_| AdapterId(rng.random_range(0..3))).collect();
    assignment[0] = AdapterId(1);
    let x = Matrix::random(rows, 256, 1.0, &mut rng);
    Instance { model, adapters, x, assignment }
}

fn serve_table() -> TilingTable {
    TilingTable::uniform(TilingConfig::from_array(SERVE_TILING).expect("config")).expect("table")
}

fn c2_delora_identity() -> Verdict {
    let t = Instant::now();
    let table = serve_table();
    let gemm = TiledGemm::new(&table);
    let clock = MonotonicClock::new();
    let mut worst = 0.0f64;
    let mut rows_checked = 0;
    for seed in 0..100 {
        let mut inst = instance(seed);
        let unmerged =
            forward_unmerged(&inst.model, &ModelState::new(), &inst.x, &inst.assignment, &inst.adapters, &gemm)
                .expect("unmerged");
        let mut state = ModelState::new();
        merge(&mut inst.model, &mut state, &inst.adapters[&AdapterId(0)], &gemm, &clock).expect("merge");
        init_delora(&mut state, &inst.adapters).expect("delora");
        assert_eq!(state.mode(), Mode::Mixture(AdapterId(0)));
        let mixture =
            forward_mixture(&inst.model, &state, &inst.x, &inst.assignment, &inst.adapters, &gemm).expect("mixture");
        let others: Vec<usize> = (0..inst.assignment.len()).filter(|&i| inst.assignment[i] != AdapterId(0)).collect();
        rows_checked += others.len();
        let (err, tol) = compare(&mixture.output.gather_rows(&others), &unmerged.output.gather_rows(&others));
        if err > tol {
            return fail(format!("instance {seed}: error {err:e} > {tol:e}"));
        }
        worst = worst.max(err / tol);
    }
    let secs = t.elapsed().as_secs_f64();
    let detail = format!("100 instances, {rows_checked} rows, worst error {worst:.3} of tolerance, {secs:.1}s of 60s");
    if secs < 60.0 {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn c3_mode_equivalence() -> Verdict {
    let table = serve_table();
    let gemm = TiledGemm::new(&table);
    let clock = MonotonicClock::new();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut inst = instance(seed);
        let single = vec![AdapterId(2); inst.x.rows()];
        let unmerged = forward_unmerged(&inst.model, &ModelState::new(), &inst.x, &single, &inst.adapters, &gemm)
            .expect("unmerged");
        let mut state = ModelState::new();
        merge(&mut inst.model, &mut state, &inst.adapters[&AdapterId(2)], &gemm, &clock).expect("merge");
        let merged = forward_merged(&inst.model, &state, &inst.x, &gemm).expect("merged");
        if merged.macs.bypass != 0 {
            return fail(format!("instance {seed}: merged pass ran {} bypass MACs", merged.macs.bypass));
        }
        let (err, tol) = compare(&merged.output, &unmerged.output);
        if err > tol {
            return fail(format!("instance {seed}: error {err:e} > {tol:e}"));
        }
        worst = worst.max(err / tol);
    }
    pass(format!("100 instances, worst error {worst:.3} of tolerance, zero bypass MACs in merged mode"))
}

fn c4_round_trip() -> Verdict {
    let table = serve_table();
    let gemm = TiledGemm::new(&table);
    let clock = MonotonicClock::new();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let dims = ModelDims { num_layers: 4, hidden_dim: 256, vocab_size: 32 };
    let mut model = BaseModel::<f32>::random(dims, Activation::Softsign, &mut rng).expect("model");
    let adapter = Arc::new(LoraAdapter::random(AdapterId(0), 4, 256, 64, None, &mut rng).expect("adapter"));
    let checkpoint: Vec<Vec<f32>> = model.layers().iter().map(|w| w.as_slice().to_vec()).collect();
    let addrs = model.layer_addrs();
    let mut state = ModelState::new();
    for _ in 0..100 {
        merge(&mut model, &mut state, &adapter, &gemm, &clock).expect("merge");
        unmerge(&mut model, &mut state, &adapter, &gemm, &clock).expect("unmerge");
    }
    let mut worst = 0.0f64;
    for (i, (w, c)) in model.layers().iter().zip(&checkpoint).enumerate() {
        let mag = c.iter().fold(0.0f64, |a, v| a.max(f64::from(v.abs())));
        let drift = w.as_slice().iter().zip(c).fold(0.0f64, |a, (x, y)| a.max(f64::from((x - y).abs())));
        if drift > REL * mag {
            return fail(format!("layer {i}: drift {drift:e} > {:e}", REL * mag));
        }
        worst = worst.max(drift / (REL * mag));
    }
    if model.layer_addrs() != addrs {
        return fail("layer storage was reallocated");
    }
    pass(format!("100 cycles at r=64, worst drift {worst:.3} of tolerance, layer addresses unchanged"))
}

fn queued(id: u64, adapter: u32, credit: Duration) -> Request {
    let mut r = Request::new(id, AdapterId(adapter), Duration::from_millis(id), 8, 4, HeadKind::Lm);
    r.credit = credit;
    r
}

fn c5_hand_traces() -> Verdict {
    let theta = Duration::from_millis(20);
    let cfg = SchedulerConfig::new(8, theta).expect("config");
    let (ok, hot) = (Duration::from_millis(1), Duration::from_millis(30));
    // (name, queue, current mode, expected mode, expected batch ids)
    type Case = (&'static str, Vec<Request>, Mode, Mode, Vec<u64>);
    let cases: [Case; 3] = [
        (
            "merge",
            vec![
                queued(0, 1, ok),
                queued(1, 2, ok),
                queued(2, 1, ok),
                queued(3, 1, ok),
                queued(4, 2, ok),
                queued(5, 1, ok),
                queued(6, 1, ok),
                queued(7, 1, ok),
            ],
            Mode::Unmerged,
            Mode::Merged(AdapterId(1)),
            vec![0, 2, 3, 5, 6, 7],
        ),
        (
            "mixture",
            vec![
                queued(0, 1, ok),
                queued(1, 1, ok),
                queued(2, 2, hot),
                queued(3, 1, ok),
                queued(4, 1, ok),
                queued(5, 2, hot),
                queued(6, 1, ok),
            ],
            Mode::Merged(AdapterId(1)),
            Mode::Mixture(AdapterId(1)),
            vec![2, 5, 0, 1, 3, 4, 6],
        ),
        (
            "unmerge",
            vec![
                queued(0, 1, ok),
                queued(1, 2, hot),
                queued(2, 3, hot),
                queued(3, 1, ok),
                queued(4, 4, hot),
                queued(5, 1, hot),
                queued(6, 5, hot),
                queued(7, 1, ok),
                queued(8, 1, ok),
                queued(9, 1, ok),
            ],
            Mode::Merged(AdapterId(1)),
            Mode::Unmerged,
            vec![1, 2, 4, 5, 6, 0, 3, 7],
        ),
    ];
    for (name, queue, mode, want_mode, want_ids) in cases {
        let d = schedule(&queue, mode, &cfg);
        let ids: Vec<u64> = d.batch.iter().map(|&i| queue[i].id).collect();
        if d.mode != want_mode || ids != want_ids {
            return fail(format!("{name}: got ({}, {ids:?}), expected ({want_mode}, {want_ids:?})", d.mode));
        }
    }
    pass("merge, mixture and unmerge branches match the documented (mode, batch)")
}

fn chat(output: [usize; 2]) -> AppProfile {
    AppProfile {
        name: "chat".into(),
        input_len: LenDist::Fixed(32),
        output_len: LenDist::Uniform { lo: output[0], hi: output[1] },
        head: HeadKind::Lm,
        latency_budget: None,
    }
}

fn workload(duration: Duration, rate: f64, skewness: f64, profile: AppProfile, seed: u64) -> Vec<Request> {
    generate(&WorkloadSpec {
        duration,
        rate,
        arrival: Arrival::Poisson,
        num_adapters: 8,
        skewness,
        mix: vec![(profile, 1.0)],
        seed,
    })
    .expect("workload")
}

const DESK: ModelDims = ModelDims { num_layers: 4, hidden_dim: 256, vocab_size: 1024 };
const DESK_RANKS: [usize; 4] = [8, 16, 32, 64];

fn serve(trace: &[Request], ranks: &[usize], max_bs: usize, policy: ModePolicy) -> Metrics {
    let (mut model, adapters) = synthetic_model(DESK, ranks, 8, Some(16), 5).expect("model");
    let table = serve_table();
    let cfg = ServeConfig { max_bs, policy, ..ServeConfig::default() };
    serve_loop(&mut model, &adapters, trace, &cfg, &TiledGemm::new(&table), &MonotonicClock::new()).expect("serve")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn c6_starvation() -> Verdict {
    let trace = workload(Duration::from_secs(60), 12.0, 0.9, chat([64, 128]), 606);
    let (mut model, adapters) = synthetic_model(DESK, &DESK_RANKS, 8, Some(16), 5).expect("model");
    let table = serve_table();
    let cfg = ServeConfig { max_bs: 8, theta: ThetaPolicy::BatchMultiple(5.0), ..ServeConfig::default() };
    let m = serve_loop(&mut model, &adapters, &trace, &cfg, &TiledGemm::new(&table), &MonotonicClock::new())
        .expect("serve");
    let bound = m.max_round + m.max_switch;
    let worst = m.requests.iter().max_by_key(|r| r.wait_excess).expect("requests");
    let detail = format!(
        "{} requests over 60 s, {} switches, max wait {:.3} ms, worst excess over theta {:.3} ms (request {}) vs bound {:.3} ms, {} unserved",
        m.requests.len(),
        m.switches,
        ms(m.max_wait()),
        ms(worst.wait_excess),
        worst.id,
        ms(bound),
        m.unserved
    );
    if m.unserved == 0 && m.requests.len() == trace.len() && worst.wait_excess <= bound {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn c7_throughput() -> Verdict {
    // 48 requests for one rank-64 adapter, all arriving within 48 ms: the
    // backlog keeps every round full so throughput is service-bound.
    let trace = workload(Duration::from_millis(48), 1000.0, 1.0, chat([64, 128]), 707);
    let (mut merged, mut unmerged) = (Vec::new(), Vec::new());
    for _ in 0..3 {
        merged.push(serve(&trace, &[64], 32, ModePolicy::Merged).throughput_rps());
        unmerged.push(serve(&trace, &[64], 32, ModePolicy::Unmerged).throughput_rps());
    }
    let (m, u) = (median(merged), median(unmerged));
    let ratio = m / u;
    let detail = format!(
        "{} requests: merged {m:.2} req/s, unmerged {u:.2} req/s, ratio {ratio:.3} (gate 1.0, expected 1.1){}",
        trace.len(),
        if ratio < 1.1 { "; below the expected ratio" } else { "" }
    );
    if ratio >= 1.0 {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn c8_auto_mode() -> Verdict {
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, skew) in [0.3, 0.5, 0.7, 0.9].into_iter().enumerate() {
        let trace = workload(Duration::from_secs(5), 3.0, skew, chat([64, 128]), 800 + i as u64);
        let policies = [ModePolicy::Auto, ModePolicy::Merged, ModePolicy::Unmerged];
        // Host speed drifts over seconds. Every rep uses a different run
        // order, and auto is compared against the forced runs of its own
        // rep before taking medians.
        let orders = [[0, 1, 2], [1, 2, 0], [2, 0, 1], [0, 2, 1], [2, 1, 0], [1, 0, 2]];
        let mut runs = [Vec::new(), Vec::new(), Vec::new()];
        for rep in 0..24 {
            for j in orders[rep % orders.len()] {
                runs[j].push(serve(&trace, &DESK_RANKS, 8, policies[j]).avg_token_latency_ms());
            }
        }
        let vs_merged = median(runs[0].iter().zip(&runs[1]).map(|(a, m)| a / m).collect());
        let vs_unmerged = median(runs[0].iter().zip(&runs[2]).map(|(a, u)| a / u).collect());
        let ratio = vs_merged.max(vs_unmerged);
        let [a, m, u] = runs.map(median);
        ok &= ratio <= 1.10;
        lines.push(format!(
            "skew {skew}: auto {a:.4} merged {m:.4} unmerged {u:.4} ms/token, auto/merged {vs_merged:.3} auto/unmerged {vs_unmerged:.3}"
        ));
    }
    let detail = lines.join("; ");
    if ok {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn c9_tiling_search() -> Verdict {
    let mut grid = default_shape_grid(256, &[16, 64], &[1, 64, 256]);
    grid.extend([(1, 256, 1024), (64, 256, 1024), (256, 256, 1024)]);
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut candidates = candidate_configs(64 * 1024, 4).expect("candidates");
    candidates.shuffle(&mut rng);
    candidates.truncate(32);
    let clock = MonotonicClock::new();

    // Each shape is re-benchmarked as soon as the search settles it, since
    // the relative speed of close configs shifts over tens of seconds on a
    // shared host.
    let mut check_rng = ChaCha8Rng::seed_from_u64(910);
    // (shape, entry, re-benchmarked best, entry / best)
    type Check = ((usize, usize, usize), TilingConfig, TilingConfig, f64);
    let mut checks: Vec<Check> = Vec::new();
    let outcome = tiling_search(&grid, &candidates, 9, &clock, &mut rng, |_, shape, entry| {
        let (best, ratio) = rebenchmark(shape, &candidates, &entry.config, &mut check_rng);
        checks.push((shape, entry.config, best, ratio));
    })
    .expect("search");
    if !outcome.failures.is_empty() {
        return fail(format!("{} shapes failed to benchmark", outcome.failures.len()));
    }
    let table = outcome.table;
    for &((m, k, n), cfg, _, _) in &checks {
        if table.get(&ShapeKey::for_shape(m, k, n)).map(|e| e.config) != Some(cfg) {
            return fail(format!("table entry for {m}x{k}x{n} differs from the searched winner"));
        }
    }
    if checks.len() != grid.len() {
        return fail(format!("{} of {} shapes settled", checks.len(), grid.len()));
    }

    let &((wm, wk, wn), entry, best, worst) = checks.iter().max_by(|x, y| x.3.total_cmp(&y.3)).expect("non-empty grid");
    let winners: std::collections::BTreeSet<TilingConfig> = table.entries().map(|(_, e)| e.config).collect();
    let mut detail = format!(
        "{} shapes x {} candidates; worst entry {worst:.3}x the re-benchmarked best ({wm}x{wk}x{wn}, entry {entry} vs {best}); {} distinct winners",
        grid.len(),
        candidates.len(),
        winners.len()
    );
    if winners.len() < 2 {
        detail += "; warning: single universal winner on this host, optimality clause only";
    }
    if worst <= 1.10 {
        pass(detail)
    } else {
        fail(detail)
    }
}

/// Re-times every candidate round-robin so slow drift hits all configs
/// alike, then times `entry` head to head against the fastest. Picking the
/// minimum of noisy medians favours a lucky candidate, hence the separate
/// paired measurement. Returns the fastest config and the entry's ratio.
fn rebenchmark(
    (m, k, n): (usize, usize, usize),
    candidates: &[TilingConfig],
    entry: &TilingConfig,
    rng: &mut ChaCha8Rng,
) -> (TilingConfig, f64) {
    let a = Matrix::<f32>::random(m, k, 1.0, rng);
    let b = Matrix::<f32>::random(k, n, 1.0, rng);
    let reps = (4_000_000 / (m * k * n)).clamp(1, 1000);
    // untimed warm-up with the same config first, as in the search
    let time = |cfg: &TilingConfig| {
        std::hint::black_box(atmm_multiply(&a, &b, cfg).expect("gemm"));
        let t = Instant::now();
        for _ in 0..reps {
            std::hint::black_box(atmm_multiply(&a, &b, cfg).expect("gemm"));
        }
        t.elapsed().as_secs_f64() / reps as f64
    };
    let mut times: Vec<Vec<f64>> = vec![Vec::new(); candidates.len()];
    for _ in 0..9 {
        for (i, cfg) in candidates.iter().enumerate() {
            times[i].push(time(cfg));
        }
    }
    let med: Vec<f64> = times.into_iter().map(median).collect();
    let best = candidates[(0..med.len()).min_by(|&x, &y| med[x].total_cmp(&med[y])).expect("candidates")];
    if best == *entry {
        return (best, 1.0);
    }
    let ratios = (0..21)
        .map(|i| {
            // alternate which config runs first
            if i % 2 == 0 {
                let w = time(entry);
                w / time(&best)
            } else {
                let f = time(&best);
                time(entry) / f
            }
        })
        .collect();
    (best, median(ratios))
}

fn sources(n: u32, req: f64) -> Vec<KnowledgeSource> {
    (0..n).map(|i| KnowledgeSource::new(i, i, "image", req)).collect()
}

fn c10_fusion() -> Verdict {
    // (a) soundness over random oracles. Requirements stay below every
    // source's solo accuracy so each instance is satisfiable.
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    for run in 0..100u64 {
        let n = rng.random_range(1..=12u32);
        let src: Vec<KnowledgeSource> = (0..n)
            .map(|i| {
                KnowledgeSource::new(i, rng.random_range(0..n.max(2) / 2 + 1), "image", rng.random_range(0.5..0.8))
            })
            .collect();
        let noise = Some(OracleNoise { seed: run, amplitude: 0.01 });
        let model = if run % 2 == 0 {
            OracleModel::Decay {
                base: rng.random_range(0.92..1.0),
                default_slope: rng.random_range(0.0..0.08),
                slopes: Default::default(),
            }
        } else {
            let mut penalty = std::collections::BTreeMap::new();
            for _ in 0..n {
                let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
                if a != b {
                    penalty.insert((a, b), rng.random_range(0.0..0.2));
                }
            }
            OracleModel::Interference { default_base: rng.random_range(0.92..1.0), base: Default::default(), penalty }
        };
        let oracle = SyntheticOracle::new(model, noise).expect("oracle");
        let plan = match fuse(&src, &oracle, run) {
            Ok(p) => p,
            Err(e) => return fail(format!("run {run}: {e}")),
        };
        let report = validate_plan(&plan, &src, &oracle);
        if !report.is_clean() {
            return fail(format!("run {run}: {:?}", report.issues));
        }
        let mut covered: Vec<u32> = plan.adapters.iter().flat_map(|a| a.sources.iter().copied()).collect();
        covered.sort_unstable();
        if covered != (0..n).collect::<Vec<_>>() {
            return fail(format!("run {run}: sources not covered exactly once"));
        }
    }

    // (b) acc(k) = 1 - 0.05k with threshold 0.87: two sources per adapter
    let decay = SyntheticOracle::decay(1.0, 0.05).expect("oracle");
    for n in 1..=16u32 {
        let plan = fuse(&sources(n, 0.87), &decay, u64::from(n)).expect("fuse");
        if plan.num_adapters() as u32 != n.div_ceil(2) {
            return fail(format!("decay: {n} sources gave {} adapters", plan.num_adapters()));
        }
    }

    // (c) any fusion breaks the requirement: one adapter per source
    let worst = SyntheticOracle::decay(1.0, 0.3).expect("oracle");
    for n in 1..=10u32 {
        let plan = fuse(&sources(n, 0.6), &worst, 3).expect("fuse");
        if plan.num_adapters() as u32 != n {
            return fail(format!("worst case: {n} sources gave {} adapters", plan.num_adapters()));
        }
    }

    // (d) kept states equal a replay of their members, bit for bit
    let noisy = SyntheticOracle::new(
        OracleModel::Decay { base: 1.0, default_slope: 0.05, slopes: Default::default() },
        Some(OracleNoise { seed: 9, amplitude: 0.004 }),
    )
    .expect("oracle");
    let src = sources(11, 0.87);
    let run = fuse_detailed(&src, &noisy, 12).expect("fuse");
    if run.plan.rollbacks == 0 {
        return fail("expected at least one rollback");
    }
    for (adapter, state) in run.plan.adapters.iter().zip(&run.states) {
        let mut replay = noisy.init();
        for id in &adapter.sources {
            replay = noisy.train(&replay, &src[*id as usize]);
        }
        if !state.bit_eq(&replay) {
            return fail(format!("adapter {:?}: rolled-back state differs from replay", adapter.sources));
        }
    }
    pass(format!(
        "100 random plans clean; ceil(N/2) for N=1..16; N adapters in the worst case; {} rollbacks bit-exact",
        run.plan.rollbacks
    ))
}

fn c11_task_head() -> Verdict {
    let (mut model, adapters) = synthetic_model(DESK, &[32], 2, Some(16), 11).expect("model");
    let table = serve_table();
    let gemm = TiledGemm::new(&table);
    let cfg = ServeConfig::default();
    let one = |head: HeadKind| vec![Request::new(0, AdapterId(1), Duration::ZERO, 256, 5, head)];
    let (mut task, mut lm) = (Vec::new(), Vec::new());
    for _ in 0..7 {
        for (head, out) in [(HeadKind::Task, &mut task), (HeadKind::Lm, &mut lm)] {
            let m = serve_loop(&mut model, &adapters, &one(head), &cfg, &gemm, &MonotonicClock::new()).expect("serve");
            let r = &m.requests[0];
            let want = if head == HeadKind::Task { 1 } else { 5 };
            if r.rounds != want {
                return fail(format!("{} head ran {} rounds, expected {want}", head.as_str(), r.rounds));
            }
            out.push(ms(r.e2e()));
        }
    }
    let (t, l) = (median(task), median(lm));
    let detail = format!("task head 1 round {t:.3} ms vs LM head 5 rounds {l:.3} ms (medians of 7)");
    if t < l {
        pass(detail)
    } else {
        fail(detail)
    }
}

/// Parses a fixed-point millisecond string to integer nanoseconds.
fn ms_to_ns(s: &str) -> u128 {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    let frac = format!("{frac:0<6}");
    int.parse::<u128>().expect("ms") * 1_000_000 + frac[..6].parse::<u128>().expect("ms")
}

fn c12_metric_formula() -> Verdict {
    let mut trace = workload(Duration::from_secs(2), 8.0, 0.6, chat([16, 48]), 1212);
    trace.extend(workload(Duration::from_secs(2), 2.0, 0.6, AppProfile::video(), 1213));
    trace.sort_by_key(|r| r.arrival);
    for (i, r) in trace.iter_mut().enumerate() {
        r.id = i as u64;
    }
    let m = serve(&trace, &DESK_RANKS, 16, ModePolicy::Auto);
    let dir = tempfile::tempdir().expect("tempdir");
    write_metrics(dir.path(), &m).expect("write");
    let csv = std::fs::read_to_string(dir.path().join("requests.csv")).expect("csv");
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().expect("header").split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).expect("column");
    let (e2e, inp, out) = (col("e2e_ms"), col("input_tokens"), col("output_tokens"));
    let (mut total_ns, mut tokens, mut rows) = (0u128, 0u128, 0);
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        total_ns += ms_to_ns(f[e2e]);
        tokens += f[inp].parse::<u128>().expect("tokens") + f[out].parse::<u128>().expect("tokens");
        rows += 1;
    }
    let recomputed = total_ns as f64 / tokens as f64 / 1e6;
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).expect("summary"))
            .expect("json");
    let reported = summary["avg_token_latency_ms"].as_f64().expect("field");
    let detail = format!("{rows} rows, {tokens} tokens: recomputed {recomputed:.9} ms, reported {reported:.9} ms");
    if rows == trace.len() && recomputed == reported && format!("{recomputed:.6}") == format!("{reported:.6}") {
        pass(detail)
    } else {
        fail(detail)
    }
}
