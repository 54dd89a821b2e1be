//! Test-only reference code, kept independent of the engine.
#![allow(dead_code)]

use emn_core::dataio::{synth_shifted_blobs, FeatureDataset, SynthConfig};
use emn_core::harness::PipelineConfig;
use emn_core::{NetworkTopology, TopologyConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Straight-line interpreter of the accumulate / fire / reset / remember
/// recurrence over a dense weight table. Returns `(memory, hidden)` for all
/// nodes after `rounds` rounds.
pub fn reference_propagate(
    n: usize,
    dim: usize,
    weight: &[Vec<Option<f64>>],
    x: &[f64],
    rounds: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut h = vec![0.0; n];
    let mut o = vec![0.0; n];
    let mut m = vec![0.0; n];
    o[..dim].copy_from_slice(x);
    for _ in 0..rounds {
        let mut o_next = vec![0.0; n];
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                if let Some(w) = weight[j][i] {
                    s += o[j] * w;
                }
            }
            let acc = h[i] + s;
            if acc > 0.0 {
                o_next[i] = acc;
                h[i] = 0.0;
            } else {
                o_next[i] = 0.0;
                h[i] = acc;
            }
            m[i] += o_next[i];
        }
        o = o_next;
    }
    (m, h)
}

/// Dense `weight[src][dst]` table read back from a topology.
pub fn dense_weights(t: &NetworkTopology) -> Vec<Vec<Option<f64>>> {
    let n = t.node_count();
    let mut w = vec![vec![None; n]; n];
    for (src, dst, v) in t.edges() {
        w[src][dst] = Some(v);
    }
    w
}

/// Random valid config with at most `max_nodes` nodes.
pub fn random_small_config(rng: &mut ChaCha8Rng, max_nodes: usize) -> TopologyConfig {
    loop {
        let dim = rng.random_range(1..=3);
        let hub = rng.random_range(1..=2);
        let bridging = rng.random_range(0..=2);
        let n = dim + hub + bridging;
        if n > max_nodes {
            continue;
        }
        let deg = if bridging > 0 { rng.random_range(1..n) } else { 0 };
        return TopologyConfig {
            feature_dim: dim,
            hub_count: hub,
            bridging_count: bridging,
            bridging_in_degree: deg,
            seed: rng.random(),
        };
    }
}

/// Pinned synthetic shifted-blobs task.
pub fn pinned_task(seed: u64) -> SynthConfig {
    SynthConfig {
        class_count: 3,
        dim: 20,
        samples_per_class: 200,
        class_mean_scale: 1.0,
        within_class_spread: 1.25,
        shift_vector_norm: 8.0,
        seed,
    }
}

pub fn pinned_pipeline(seed: u64) -> PipelineConfig {
    let mut p = PipelineConfig {
        topology_seed: seed,
        train_seed: seed,
        ..Default::default()
    };
    p.adapt.shuffle_seed = seed;
    p
}

pub fn pinned_data(seed: u64) -> (FeatureDataset, FeatureDataset) {
    synth_shifted_blobs(&pinned_task(seed)).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}
