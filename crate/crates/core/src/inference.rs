//! Network-level prediction: propagate, query every memory unit, and fuse the
//! node posteriors weighted by each node's confidence.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{EmnError, Result};
use crate::matrix::Matrix;
use crate::memory::{argmax, init_memory, predict_unit, supervised_update, HyperParams, MemoryStore, NodePrediction};
use crate::propagation::{propagate, propagate_batch_counted, OpCounter};
use crate::topology::{build_topology, NetworkTopology, TopologyConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EmnModel {
    pub topology: NetworkTopology,
    pub store: MemoryStore,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub posterior: Vec<f64>,
    pub node_details: Option<Vec<NodePrediction>>,
}

impl EmnModel {
    pub fn new(topology_cfg: &TopologyConfig, class_count: usize, hyper: HyperParams) -> Result<Self> {
        let topology = build_topology(topology_cfg)?;
        let store = init_memory(topology.memory_node_count(), class_count, hyper)?;
        Ok(EmnModel {
            topology,
            store,
            metadata: BTreeMap::new(),
        })
    }

    pub fn from_parts(topology: NetworkTopology, store: MemoryStore) -> Result<Self> {
        if store.node_count() != topology.memory_node_count() {
            return Err(EmnError::dim(
                topology.memory_node_count(),
                store.node_count(),
                "memory unit count",
            ));
        }
        if store.units.iter().any(|u| u.class_count() != store.class_count) {
            return Err(EmnError::Config("memory unit class counts disagree".into()));
        }
        store.hyper.validate()?;
        Ok(EmnModel {
            topology,
            store,
            metadata: BTreeMap::new(),
        })
    }

    pub fn class_count(&self) -> usize {
        self.store.class_count
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.store.hyper
    }

    pub fn feature_dim(&self) -> usize {
        self.topology.feature_dim()
    }

    pub fn is_trained(&self) -> bool {
        self.store.is_ready()
    }

    /// Memory signals for every row of `xs`.
    pub fn signals(&self, xs: &Matrix, counter: &OpCounter) -> Result<Matrix> {
        propagate_batch_counted(&self.topology, xs, self.hyper().rounds, counter)
    }

    /// One labeled pass over `(xs, labels)` in batches of `hyper.batch_size`.
    /// Rows are visited in a seeded shuffled order when `shuffle_seed` is set.
    pub fn fit(&mut self, xs: &Matrix, labels: &[usize], shuffle_seed: Option<u64>) -> Result<u64> {
        if labels.len() != xs.rows() {
            return Err(EmnError::dim(xs.rows(), labels.len(), "label count"));
        }
        let signals = self.signals(xs, &OpCounter::new())?;
        let mut order: Vec<usize> = (0..xs.rows()).collect();
        if let Some(seed) = shuffle_seed {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        let beta = self.hyper().beta;
        let mut writes = 0;
        for chunk in order.chunks(self.hyper().batch_size) {
            let batch = signals.select_rows(chunk);
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            writes += supervised_update(&mut self.store, &batch, &batch_labels, beta)?;
        }
        Ok(writes)
    }
}

/// Confidence-weighted average of node posteriors. Weights are the
/// confidences divided by their maximum, so equal confidences (including all
/// at the underflow floor) give the plain average.
pub fn fuse_posteriors(posteriors: &[&[f64]], confidences: &[f64]) -> Vec<f64> {
    let classes = posteriors.first().map_or(0, |p| p.len());
    let cmax = confidences.iter().copied().fold(0.0, f64::max);
    let weights: Vec<f64> = if cmax > 0.0 {
        confidences.iter().map(|&c| c / cmax).collect()
    } else {
        vec![1.0; confidences.len()]
    };
    let total: f64 = weights.iter().sum();
    let mut fused = vec![0.0; classes];
    for (p, &w) in posteriors.iter().zip(&weights) {
        for (f, &v) in fused.iter_mut().zip(p.iter()) {
            *f += w * v;
        }
    }
    for f in &mut fused {
        *f /= total;
    }
    fused
}

/// Prediction from precomputed memory signals (one entry per memory node).
pub fn predict_from_signals(model: &EmnModel, signals: &[f64], keep_details: bool) -> Result<Prediction> {
    model.store.ensure_ready()?;
    if signals.len() != model.store.node_count() {
        return Err(EmnError::dim(
            model.store.node_count(),
            signals.len(),
            "memory signal length",
        ));
    }
    Ok(predict_signals_unchecked(model, signals, keep_details))
}

pub(crate) fn predict_signals_unchecked(model: &EmnModel, signals: &[f64], keep_details: bool) -> Prediction {
    let hyper = model.hyper();
    let nodes: Vec<NodePrediction> = model
        .store
        .units
        .iter()
        .zip(signals)
        .map(|(u, &m)| predict_unit(u, m, hyper))
        .collect();
    let posts: Vec<&[f64]> = nodes.iter().map(|n| n.posterior.as_slice()).collect();
    let confidences: Vec<f64> = if hyper.confidence_enabled {
        nodes.iter().map(|n| n.confidence).collect()
    } else {
        vec![1.0; nodes.len()]
    };
    let posterior = fuse_posteriors(&posts, &confidences);
    Prediction {
        label: argmax(&posterior),
        posterior,
        node_details: keep_details.then_some(nodes),
    }
}

pub fn predict(model: &EmnModel, x: &[f64]) -> Result<Prediction> {
    model.store.ensure_ready()?;
    let m = propagate(&model.topology, x, model.hyper().rounds)?;
    Ok(predict_signals_unchecked(model, m.as_slice(), false))
}

/// Like [`predict`] but keeps every node's `(class, confidence, posterior)`.
pub fn predict_detailed(model: &EmnModel, x: &[f64]) -> Result<Prediction> {
    model.store.ensure_ready()?;
    let m = propagate(&model.topology, x, model.hyper().rounds)?;
    Ok(predict_signals_unchecked(model, m.as_slice(), true))
}

pub fn predict_batch(model: &EmnModel, xs: &Matrix) -> Result<Vec<Prediction>> {
    predict_batch_counted(model, xs, &OpCounter::new())
}

pub fn predict_batch_counted(model: &EmnModel, xs: &Matrix, counter: &OpCounter) -> Result<Vec<Prediction>> {
    model.store.ensure_ready()?;
    let signals = model.signals(xs, counter)?;
    Ok(predict_signal_rows(model, &signals))
}

pub(crate) fn predict_signal_rows(model: &EmnModel, signals: &Matrix) -> Vec<Prediction> {
    (0..signals.rows())
        .into_par_iter()
        .map(|b| predict_signals_unchecked(model, signals.row(b), false))
        .collect()
}
