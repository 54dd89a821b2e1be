//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use emn_core::adaptation::{reinforced_update, AdaptationConfig};
use emn_core::dataio::{model_from_json, model_to_json};
use emn_core::harness::{bench, evaluate, run_ablation, run_pipeline, BenchConfig};
use emn_core::inference::{fuse_posteriors, predict_batch, predict_detailed, EmnModel};
use emn_core::memory::{
    fuzzy_likelihood, init_memory, log_fuzzy_likelihood, node_posterior, supervised_update, GaussianClassMemory,
    HyperParams, MemoryStore,
};
use emn_core::propagation::{propagate, propagate_trace};
use emn_core::{build_topology, Matrix, NetworkTopology, TopologyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, budget_secs: u64) -> Result<(), String> {
    ensure(elapsed < Duration::from_secs(budget_secs), || {
        format!("runtime {:.2}s exceeds {budget_secs}s", elapsed.as_secs_f64())
    })
}

fn propagation_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..1000 {
        let cfg = random_small_config(&mut rng, 6);
        let t = build_topology(&cfg).map_err(|e| e.to_string())?;
        let rounds = rng.random_range(1..=4);
        let x: Vec<f64> = (0..cfg.feature_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = propagate(&t, &x, rounds).map_err(|e| e.to_string())?;
        let (mem, _) = reference_propagate(t.node_count(), cfg.feature_dim, &dense_weights(&t), &x, rounds);
        ensure(mem[..cfg.feature_dim].iter().all(|&m| m == 0.0), || {
            format!("case {case}: entrance memory")
        })?;
        let want = &mem[cfg.feature_dim..];
        let same = got.as_slice().iter().zip(want).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || format!("case {case}: {:?} != {:?}", got.as_slice(), want))?;
    }
    within(started.elapsed(), 5)?;
    Ok(format!(
        "1000 random nets bit-identical in {:.3}s",
        started.elapsed().as_secs_f64()
    ))
}

fn homogeneity() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let t = build_topology(&TopologyConfig::with_feature_dim(64, rng.random())).map_err(|e| e.to_string())?;
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: f64 = rng.random_range(0.01..100.0);
        let cx: Vec<f64> = x.iter().map(|v| v * c).collect();
        let a = propagate(&t, &x, 3).map_err(|e| e.to_string())?;
        let b = propagate(&t, &cx, 3).map_err(|e| e.to_string())?;
        for (i, (&ai, &bi)) in a.as_slice().iter().zip(b.as_slice()).enumerate() {
            let scaled = c * ai;
            if scaled != bi {
                worst = worst.max((scaled - bi).abs() / scaled.abs().max(bi.abs()));
            }
            ensure(rel_close(scaled, bi, 1e-9), || {
                format!("case {case} node {i}: c*m={scaled} vs m(cx)={bi}")
            })?;
        }
    }
    within(started.elapsed(), 10)?;
    Ok(format!("200 triples, worst relative error {worst:.2e}"))
}

fn tiny_net() -> NetworkTopology {
    let cfg = TopologyConfig {
        feature_dim: 2,
        hub_count: 1,
        bridging_count: 1,
        bridging_in_degree: 2,
        seed: 0,
    };
    NetworkTopology::from_predecessors(
        cfg,
        vec![vec![], vec![], vec![(0, 1.0), (1, -0.3)], vec![(1, 0.3), (2, -1.0)]],
    )
    .unwrap()
}

fn hand_trace() -> Outcome {
    let t = tiny_net();
    let (m, trace) = propagate_trace(&t, &[1.0, 2.0], 3).map_err(|e| e.to_string())?;
    ensure(m.as_slice() == [0.4, 0.6], || format!("m = {:?}", m.as_slice()))?;
    ensure(trace.rounds.len() == 3, || "trace length".into())?;
    ensure(trace.rounds[0].activated == vec![2, 3], || {
        format!("round 1 {:?}", trace.rounds[0].activated)
    })?;
    ensure(trace.rounds[1..].iter().all(|r| r.activated.is_empty()), || {
        "later rounds fired".into()
    })?;
    Ok("m = (0.4, 0.6); round 1 fires {h, b}, rounds 2-3 silent".into())
}

fn fuzzy_likelihood_fixture() -> Outcome {
    let q = fuzzy_likelihood(0.0, 1.0, 1.0, 0.0).unwrap();
    ensure((q - 0.28867513459).abs() < 1e-10, || format!("Q = {q}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut compared = 0;
    for _ in 0..10_000 {
        let mu = rng.random_range(-10.0..10.0);
        let sigma = rng.random_range(0.0..5.0);
        let sigma1 = rng.random_range(1e-3..5.0);
        let m = rng.random_range(-20.0..20.0);
        let lin = fuzzy_likelihood(mu, sigma, sigma1, m).unwrap();
        let log = log_fuzzy_likelihood(mu, sigma, sigma1, m).unwrap();
        ensure(lin <= 0.5, || format!("Q = {lin} > 0.5"))?;
        if lin >= f64::MIN_POSITIVE {
            compared += 1;
            ensure(rel_close(log.exp(), lin, 1e-12), || {
                format!("exp(log Q) {} vs Q {lin}", log.exp())
            })?;
        }
    }
    Ok(format!(
        "Q(0,1,1,0) = {q:.11}; log/linear agree on {compared} non-underflow draws"
    ))
}

fn random_unit(rng: &mut ChaCha8Rng, classes: usize) -> GaussianClassMemory {
    GaussianClassMemory {
        mu: (0..classes).map(|_| rng.random_range(-5.0..5.0)).collect(),
        sigma: (0..classes).map(|_| rng.random_range(0.0..3.0)).collect(),
        initialized: vec![true; classes],
    }
}

fn posterior_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..10_000 {
        let classes = rng.random_range(2..=8);
        let nodes = rng.random_range(1..=6);
        let hyper = HyperParams {
            fuzzy_enabled: rng.random_bool(0.7),
            ..Default::default()
        };
        let units: Vec<GaussianClassMemory> = (0..nodes).map(|_| random_unit(&mut rng, classes)).collect();
        let posts: Vec<Vec<f64>> = units
            .iter()
            .map(|u| node_posterior(u, rng.random_range(-8.0..8.0), &hyper).unwrap())
            .collect();
        for p in &posts {
            let s: f64 = p.iter().sum();
            ensure((s - 1.0).abs() <= 1e-12, || {
                format!("case {case}: node posterior sums to {s}")
            })?;
        }
        let conf: Vec<f64> = (0..nodes).map(|_| 10f64.powf(rng.random_range(-300.0..0.0))).collect();
        let refs: Vec<&[f64]> = posts.iter().map(Vec::as_slice).collect();
        let fused = fuse_posteriors(&refs, &conf);
        let s: f64 = fused.iter().sum();
        ensure((s - 1.0).abs() <= 1e-12, || format!("case {case}: fused sums to {s}"))?;
        for k in 0..classes {
            let lo = posts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            let hi = posts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
            let slack = 4.0 * f64::EPSILON;
            ensure(fused[k] >= lo - slack && fused[k] <= hi + slack, || {
                format!("case {case} class {k}: {} outside [{lo}, {hi}]", fused[k])
            })?;
        }
    }
    Ok("10000 cases: node and fused sums within 1e-12, fused inside envelope".into())
}

fn one_node_store(mu: &[f64], sigma: &[f64], hyper: HyperParams) -> MemoryStore {
    let mut s = init_memory(1, mu.len(), hyper).unwrap();
    s.units[0] = GaussianClassMemory {
        mu: mu.to_vec(),
        sigma: sigma.to_vec(),
        initialized: vec![true; mu.len()],
    };
    s
}

fn update_rules() -> Outcome {
    let mut s = one_node_store(&[1.0], &[1.0], HyperParams::default());
    let signals = Matrix::from_rows(1, &[[2.0], [2.0]]).unwrap();
    supervised_update(&mut s, &signals, &[0, 0], 0.9).map_err(|e| e.to_string())?;
    let (mu, sigma) = (s.units[0].mu[0], s.units[0].sigma[0]);
    ensure(mu == 1.1 && sigma == 0.99, || format!("mu={mu} sigma={sigma}"))?;

    // E == 1 (confidence off) is the supervised rule
    let unit_e = HyperParams {
        confidence_enabled: false,
        confidence_normalized: false,
        ..Default::default()
    };
    let base = one_node_store(&[1.0, 0.3, 2.0], &[0.5, 0.1, 0.9], unit_e);
    let signals = Matrix::from_rows(1, &[[1.7], [0.2], [2.2], [0.9], [1.1]]).unwrap();
    let labels = [0, 1, 2, 0, 1];
    let (mut a, mut b) = (base.clone(), base);
    reinforced_update(&mut a, &signals, &labels, 0.9).map_err(|e| e.to_string())?;
    supervised_update(&mut b, &signals, &labels, 0.9).map_err(|e| e.to_string())?;
    ensure(a == b, || "E=1 reinforced update differs from supervised".into())?;

    // E == 0 (signal far beyond the stored Gaussian) shrinks by beta
    let literal = HyperParams {
        confidence_normalized: false,
        ..Default::default()
    };
    let mut z = one_node_store(&[1.5], &[0.4], literal);
    let far = Matrix::from_rows(1, &[[1e6], [3e6]]).unwrap();
    reinforced_update(&mut z, &far, &[0, 0], 0.9).map_err(|e| e.to_string())?;
    ensure(
        z.units[0].mu[0] == 0.9 * 1.5 && z.units[0].sigma[0] == 0.9 * 0.4,
        || format!("shrinkage gave mu={} sigma={}", z.units[0].mu[0], z.units[0].sigma[0]),
    )?;
    Ok("mu=1.1, sigma=0.99; E=1 equals supervised; E=0 gives beta-shrinkage".into())
}

struct SeedResult {
    a0: f64,
    final_acc: f64,
    best: f64,
}

fn run_seed(seed: u64) -> Result<SeedResult, String> {
    let (src, tgt) = pinned_data(seed);
    let run = run_pipeline(&src, &tgt, &pinned_pipeline(seed)).map_err(|e| e.to_string())?;
    let h = run.history;
    ensure(h.records.len() == 16, || "expected 16 epochs".into())?;
    Ok(SeedResult {
        a0: h.initial_accuracy.unwrap(),
        final_acc: h.final_accuracy().unwrap(),
        best: h.best_epoch().unwrap().1,
    })
}

fn synthetic_adaptation() -> Outcome {
    let started = Instant::now();
    let r42 = run_seed(42)?;
    ensure((0.5..=0.9).contains(&r42.a0), || {
        format!("seed 42 A0 = {} outside [0.5, 0.9]", r42.a0)
    })?;
    // frozen from the reference run: 506/600 before adaptation, 540/600 at the best epoch
    ensure(r42.a0 == 506.0 / 600.0, || format!("seed 42 A0 drifted: {}", r42.a0))?;
    ensure(r42.best == 540.0 / 600.0, || {
        format!("seed 42 best drifted: {}", r42.best)
    })?;
    ensure(r42.best >= r42.a0 && r42.final_acc >= r42.a0, || {
        format!(
            "seed 42 regressed: A0={} final={} best={}",
            r42.a0, r42.final_acc, r42.best
        )
    })?;
    let mut improved = usize::from(r42.best > r42.a0);
    let mut summary = vec![format!("42:{:.3}->{:.3}", r42.a0, r42.best)];
    for seed in 43..52 {
        let r = run_seed(seed)?;
        if r.best > r.a0 {
            improved += 1;
        }
        summary.push(format!("{seed}:{:.3}->{:.3}", r.a0, r.best));
    }
    ensure(improved >= 8, || {
        format!("only {improved}/10 seeds improved: {}", summary.join(" "))
    })?;
    within(started.elapsed(), 60)?;
    Ok(format!("{improved}/10 seeds strictly improved [{}]", summary.join(" ")))
}

fn mean_mu_gap(a: &MemoryStore, b: &MemoryStore) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (ua, ub) in a.units.iter().zip(&b.units) {
        for (x, y) in ua.mu.iter().zip(&ub.mu) {
            total += (x - y).abs();
            count += 1;
        }
    }
    total / count as f64
}

fn memory_drift() -> Outcome {
    let (src, tgt) = pinned_data(42);
    let cfg = pinned_pipeline(42);
    let run = run_pipeline(&src, &tgt, &cfg).map_err(|e| e.to_string())?;
    let mut reference = EmnModel::new(&cfg.topology(tgt.dim()), 3, cfg.hyper).map_err(|e| e.to_string())?;
    reference
        .fit(&tgt.features, tgt.labels().unwrap(), Some(cfg.train_seed))
        .map_err(|e| e.to_string())?;
    let before = mean_mu_gap(&run.trained.store, &reference.store);
    let after = mean_mu_gap(&run.adapted.store, &reference.store);
    ensure(after < before, || format!("gap grew: {before} -> {after}"))?;
    Ok(format!("mean |mu - mu_target| {before:.4} -> {after:.4}"))
}

fn timing_structure() -> Outcome {
    let (src, tgt) = pinned_data(42);
    let run = run_pipeline(&src, &tgt, &pinned_pipeline(42)).map_err(|e| e.to_string())?;
    let report = bench(&run.trained, &tgt.without_labels(), &BenchConfig::default()).map_err(|e| e.to_string())?;
    ensure(report.repetitions == 5, || "repetitions".into())?;
    ensure(
        report.per_sample_inference_time > 0.0 && report.per_sample_adaptation_time > 0.0,
        || "non-positive timing".into(),
    )?;
    ensure(report.ratio() <= 5.0, || {
        format!("adaptation/inference ratio {:.2}", report.ratio())
    })?;
    ensure(report.forward_passes_per_adapted_sample == 1.0, || {
        format!(
            "{} forward passes per adapted sample",
            report.forward_passes_per_adapted_sample
        )
    })?;
    ensure(report.backward_passes == 0, || "backward passes recorded".into())?;
    ensure(report.adaptation_rounds == report.adaptation_forward_passes * 3, || {
        "round count".into()
    })?;
    let nodes = report.memory_nodes as f64;
    ensure(report.parameter_writes_per_adapted_sample <= nodes, || {
        format!(
            "{} parameter writes per sample exceeds {nodes} nodes",
            report.parameter_writes_per_adapted_sample
        )
    })?;
    Ok(format!(
        "ratio {:.2} (per-rep {:.2}..{:.2}), 1 forward pass and {:.1} parameter writes per adapted sample, 0 backward",
        report.ratio(),
        report.min_ratio,
        report.max_ratio,
        report.parameter_writes_per_adapted_sample
    ))
}

fn determinism_and_serialization() -> Outcome {
    let (src, tgt) = pinned_data(42);
    let cfg = pinned_pipeline(42);
    let a = run_pipeline(&src, &tgt, &cfg).map_err(|e| e.to_string())?;
    let b = run_pipeline(&src, &tgt, &cfg).map_err(|e| e.to_string())?;
    let ja = model_to_json(&a.adapted).map_err(|e| e.to_string())?;
    let jb = model_to_json(&b.adapted).map_err(|e| e.to_string())?;
    ensure(ja == jb, || "adapted models differ between runs".into())?;
    let strip = |h: &emn_core::AdaptationHistory| {
        h.records
            .iter()
            .map(|r| {
                (
                    r.epoch,
                    r.agreement.map(f64::to_bits),
                    r.accuracy.map(f64::to_bits),
                    r.parameter_writes,
                )
            })
            .collect::<Vec<_>>()
    };
    ensure(strip(&a.history) == strip(&b.history), || "histories differ".into())?;
    let pa = predict_batch(&a.adapted, &tgt.features).map_err(|e| e.to_string())?;
    let pb = predict_batch(&b.adapted, &tgt.features).map_err(|e| e.to_string())?;
    ensure(pa == pb, || "predictions differ".into())?;

    let loaded = model_from_json(&ja).map_err(|e| e.to_string())?;
    ensure(loaded == a.adapted, || "loaded model differs".into())?;
    let pl = predict_batch(&loaded, &tgt.features).map_err(|e| e.to_string())?;
    let bitwise = pl.iter().zip(&pa).all(|(x, y)| {
        x.label == y.label
            && x.posterior
                .iter()
                .zip(&y.posterior)
                .all(|(p, q)| p.to_bits() == q.to_bits())
    });
    ensure(bitwise, || "predictions changed after save/load".into())?;
    let d1 = predict_detailed(&loaded, tgt.features.row(0)).map_err(|e| e.to_string())?;
    let d2 = predict_detailed(&a.adapted, tgt.features.row(0)).map_err(|e| e.to_string())?;
    ensure(d1 == d2, || "node details changed after save/load".into())?;
    Ok(format!(
        "two runs bit-identical; {} predictions preserved by save/load",
        pl.len()
    ))
}

fn ablation() -> Outcome {
    let (src, tgt) = pinned_data(42);
    let mut cfg = pinned_pipeline(42);
    cfg.adapt = AdaptationConfig {
        shuffle_seed: 42,
        ..Default::default()
    };
    let report = run_ablation(&src, &tgt, &cfg).map_err(|e| e.to_string())?;
    let flags: Vec<(bool, bool)> = report.rows.iter().map(|r| (r.fuzzy, r.confidence)).collect();
    ensure(flags == vec![(false, false), (true, false), (true, true)], || {
        format!("flags {flags:?}")
    })?;
    let base_initial = evaluate(
        &run_pipeline(&src, &tgt, &{
            let mut c = cfg.clone();
            c.hyper.fuzzy_enabled = false;
            c.hyper.confidence_enabled = false;
            c
        })
        .map_err(|e| e.to_string())?
        .trained,
        &tgt,
    )
    .map_err(|e| e.to_string())?;
    ensure(report.rows[0].initial == base_initial, || {
        "base variant not reproducible".into()
    })?;
    ensure(report.rows[0].delta_vs_base == 0.0, || "base delta".into())?;
    let line: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{} {:.3} (d {:+.3})", r.variant, r.adapted.accuracy, r.delta_vs_base))
        .collect();
    Ok(line.join(", "))
}

/// Informational only: the printed-formula divisor on the same task.
fn literal_divisor_note() -> String {
    let (src, tgt) = pinned_data(42);
    let mut cfg = pinned_pipeline(42);
    cfg.hyper.confidence_normalized = false;
    match run_pipeline(&src, &tgt, &cfg) {
        Ok(run) => format!(
            "note: with the per-class-count divisor seed 42 goes {:.3} -> final {:.3}",
            run.history.initial_accuracy.unwrap_or(f64::NAN),
            run.history.final_accuracy().unwrap_or(f64::NAN)
        ),
        Err(e) => format!("note: literal divisor run failed: {e}"),
    }
}

fn main() {
    // `cargo test -- --list` and filters pass arguments; this runner has a single entry point.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let criteria: [Criterion; 11] = [
        ("propagation oracle equivalence", propagation_oracle),
        ("positive homogeneity", homogeneity),
        ("hand-traced fixture", hand_trace),
        ("fuzzy likelihood fixture", fuzzy_likelihood_fixture),
        ("posterior normalization", posterior_normalization),
        ("update-rule fixtures", update_rules),
        ("synthetic domain adaptation", synthetic_adaptation),
        ("memory drift toward target", memory_drift),
        ("timing structure", timing_structure),
        ("determinism and serialization", determinism_and_serialization),
        ("ablation harness", ablation),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.2}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.2}s): {detail}");
            }
        }
    }
    println!("{}", literal_divisor_note());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 11 acceptance criteria passed");
}
