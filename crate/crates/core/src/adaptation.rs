//! Reinforced memorization on an unlabeled target set.
//!
//! Each epoch labels the target rows with the current model, then replays
//! them in shuffled batches through a confidence-weighted EMA update of the
//! predicted class. Propagation does not depend on the memory, so target
//! signals are computed once and reused by every epoch.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{EmnError, Result};
use crate::inference::{predict_signal_rows, EmnModel};
use crate::matrix::Matrix;
use crate::memory::{check_beta, Divisor, MemoryStore};
use crate::propagation::{OpCounter, OpCounts};

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub shuffle_seed: u64,
    pub refresh_per_epoch: bool,
    /// When set, memory snapshots are written here before adaptation and after each epoch.
    pub snapshot_dir: Option<PathBuf>,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            epochs: 16,
            batch_size: 64,
            beta: 0.9,
            shuffle_seed: 0,
            refresh_per_epoch: true,
            snapshot_dir: None,
        }
    }
}

impl AdaptationConfig {
    /// Adaptation settings that mirror a model's hyperparameters.
    pub fn for_model(model: &EmnModel) -> Self {
        AdaptationConfig {
            batch_size: model.hyper().batch_size,
            beta: model.hyper().beta,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(EmnError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(EmnError::Config("batch_size must be positive".into()));
        }
        check_beta(self.beta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Fraction of pseudo labels unchanged since the previous epoch.
    pub agreement: Option<f64>,
    /// Accuracy against held-out labels after this epoch's updates.
    pub accuracy: Option<f64>,
    pub update_seconds_per_sample: f64,
    pub parameter_writes: u64,
    pub snapshot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdaptationHistory {
    /// Accuracy of the unadapted model, when labels were supplied.
    pub initial_accuracy: Option<f64>,
    pub records: Vec<EpochRecord>,
    pub ops: OpCounts,
    pub samples: usize,
}

impl AdaptationHistory {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.accuracy)
    }

    /// Best post-epoch accuracy. Selecting it uses target labels, so it is an
    /// oracle choice rather than something available at deployment.
    pub fn best_epoch(&self) -> Option<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.accuracy.map(|a| (r.epoch, a)))
            .fold(None, |best, cur| match best {
                Some((_, a)) if a >= cur.1 => best,
                _ => Some(cur),
            })
    }
}

pub fn pseudo_label(model: &EmnModel, xs: &Matrix) -> Result<Vec<usize>> {
    let preds = crate::inference::predict_batch(model, xs)?;
    Ok(preds.into_iter().map(|p| p.label).collect())
}

fn divisor_for(store: &MemoryStore) -> Divisor {
    if store.hyper.confidence_normalized {
        Divisor::WeightSum
    } else if store.hyper.literal_batch_divisor {
        Divisor::BatchSize
    } else {
        Divisor::ClassCount
    }
}

/// Confidence-weighted EMA update driven by pseudo labels. Each sample only
/// touches the parameters of its own pseudo label. Returns the number of
/// `(node, class)` pairs written.
pub fn reinforced_update(store: &mut MemoryStore, signals: &Matrix, pseudo_labels: &[usize], beta: f64) -> Result<u64> {
    check_beta(beta)?;
    store.check_batch(signals, pseudo_labels)?;
    store.ensure_ready()?;
    let hyper = store.hyper;
    let divisor = divisor_for(store);
    let groups = store.group_by_class(pseudo_labels);
    let mut writes = 0;
    for (class, rows) in groups.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        writes += store.ema_class_step(
            signals,
            rows,
            class,
            beta,
            pseudo_labels.len(),
            divisor,
            |unit, k, m| {
                if hyper.confidence_enabled {
                    hyper.log_likelihood(unit.mu[k], unit.sigma[k], m).exp()
                } else {
                    1.0
                }
            },
        );
    }
    Ok(writes)
}

/// Row visiting order for one epoch.
pub fn epoch_order(rows: usize, shuffle_seed: u64, epoch_index: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed ^ epoch_index as u64));
    order
}

/// Replays `labels` over precomputed `signals` in the epoch's shuffled
/// batches. Returns the number of parameter pairs written.
pub fn reinforce_epoch(
    model: &mut EmnModel,
    signals: &Matrix,
    labels: &[usize],
    cfg: &AdaptationConfig,
    epoch_index: usize,
) -> Result<u64> {
    if labels.len() != signals.rows() {
        return Err(EmnError::dim(signals.rows(), labels.len(), "pseudo label count"));
    }
    let order = epoch_order(signals.rows(), cfg.shuffle_seed, epoch_index);
    let mut writes = 0;
    for chunk in order.chunks(cfg.batch_size) {
        let batch = signals.select_rows(chunk);
        let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        writes += reinforced_update(&mut model.store, &batch, &batch_labels, cfg.beta)?;
    }
    Ok(writes)
}

fn accuracy_of(labels: &[usize], truth: &[usize]) -> f64 {
    let hits = labels.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

fn write_snapshot(model: &EmnModel, dir: &std::path::Path, epoch: usize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| EmnError::io(dir, e))?;
    let path = dir.join(format!("memory_epoch_{epoch:03}.csv"));
    let file = std::fs::File::create(&path).map_err(|e| EmnError::io(&path, e))?;
    model
        .store
        .write_snapshot_csv(std::io::BufWriter::new(file), model.feature_dim())?;
    Ok(path)
}

pub fn adapt(
    model: &mut EmnModel,
    target: &Matrix,
    cfg: &AdaptationConfig,
    held_out_labels: Option<&[usize]>,
) -> Result<AdaptationHistory> {
    let counter = OpCounter::new();
    adapt_counted(model, target, cfg, held_out_labels, &counter)
}

pub fn adapt_counted(
    model: &mut EmnModel,
    target: &Matrix,
    cfg: &AdaptationConfig,
    held_out_labels: Option<&[usize]>,
    counter: &OpCounter,
) -> Result<AdaptationHistory> {
    cfg.validate()?;
    model.store.ensure_ready()?;
    if let Some(truth) = held_out_labels {
        if truth.len() != target.rows() {
            return Err(EmnError::dim(target.rows(), truth.len(), "held-out label count"));
        }
    }
    let n = target.rows();
    let signals = model.signals(target, counter)?;
    let score = |labels: &[usize]| match held_out_labels {
        Some(truth) if n > 0 => Some(accuracy_of(labels, truth)),
        _ => None,
    };
    let labels_now =
        |m: &EmnModel| -> Vec<usize> { predict_signal_rows(m, &signals).into_iter().map(|p| p.label).collect() };

    let mut history = AdaptationHistory {
        samples: n,
        ..Default::default()
    };
    if let Some(dir) = &cfg.snapshot_dir {
        write_snapshot(model, dir, 0)?;
    }

    let mut pseudo = labels_now(model);
    history.initial_accuracy = score(&pseudo);
    let mut previous: Option<Vec<usize>> = None;

    for epoch_index in 0..cfg.epochs {
        let agreement = match &previous {
            Some(prev) if n > 0 => Some(accuracy_of(&pseudo, prev)),
            _ => None,
        };
        let started = Instant::now();
        let writes = reinforce_epoch(model, &signals, &pseudo, cfg, epoch_index)?;
        let elapsed = started.elapsed().as_secs_f64();

        let last = epoch_index + 1 == cfg.epochs;
        let needs_labels = held_out_labels.is_some() || (cfg.refresh_per_epoch && !last);
        let after = needs_labels.then(|| labels_now(model));
        let snapshot = match &cfg.snapshot_dir {
            Some(dir) => Some(write_snapshot(model, dir, epoch_index + 1)?),
            None => None,
        };
        history.records.push(EpochRecord {
            epoch: epoch_index + 1,
            agreement,
            accuracy: after.as_deref().and_then(score),
            update_seconds_per_sample: if n > 0 { elapsed / n as f64 } else { 0.0 },
            parameter_writes: writes,
            snapshot,
        });
        match after {
            Some(fresh) if cfg.refresh_per_epoch => previous = Some(std::mem::replace(&mut pseudo, fresh)),
            _ => previous = Some(pseudo.clone()),
        }
    }
    history.ops = counter.snapshot();
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{init_memory, supervised_update, GaussianClassMemory, HyperParams};

    fn store_with(mu: &[f64], sigma: &[f64], hyper: HyperParams) -> MemoryStore {
        let mut s = init_memory(1, mu.len(), hyper).unwrap();
        s.units[0] = GaussianClassMemory {
            mu: mu.to_vec(),
            sigma: sigma.to_vec(),
            initialized: vec![true; mu.len()],
        };
        s
    }

    #[test]
    fn unit_confidence_matches_supervised() {
        let hyper = HyperParams {
            confidence_enabled: false,
            ..Default::default()
        };
        let base = store_with(&[1.0, 0.5, 2.0], &[0.3, 0.2, 0.7], hyper);
        let signals = Matrix::from_rows(1, &[[2.0], [0.1], [1.4], [2.6], [0.2]]).unwrap();
        let labels = [0, 1, 0, 0, 1];
        let mut a = base.clone();
        let mut b = base;
        reinforced_update(&mut a, &signals, &labels, 0.9).unwrap();
        supervised_update(&mut b, &signals, &labels, 0.9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_sample_half_confidence() {
        // Q never reaches 0.5 away from the mean, so the weight is injected directly
        let mut s = store_with(&[1.0], &[1.0], HyperParams::default());
        let signals = Matrix::from_rows(1, &[[2.0]]).unwrap();
        s.ema_class_step(&signals, &[0], 0, 0.9, 1, Divisor::ClassCount, |_, _, _| 0.5);
        assert_eq!(s.units[0].mu[0], 1.0);
        assert_eq!(s.units[0].sigma[0], 0.9 * 1.0 + (1.0 - 0.9) * (0.5 * 1.0));
    }

    #[test]
    fn zero_confidence_shrinks() {
        let hyper = HyperParams {
            confidence_normalized: false,
            ..Default::default()
        };
        let mut s = store_with(&[1.5], &[0.4], hyper);
        let signals = Matrix::from_rows(1, &[[1e6], [2e6]]).unwrap();
        reinforced_update(&mut s, &signals, &[0, 0], 0.9).unwrap();
        assert_eq!(s.units[0].mu[0], 0.9 * 1.5);
        assert_eq!(s.units[0].sigma[0], 0.9 * 0.4);
    }

    #[test]
    fn normalized_divisor_skips_zero_mass() {
        let mut s = store_with(&[1.5], &[0.4], HyperParams::default());
        let signals = Matrix::from_rows(1, &[[1e6]]).unwrap();
        reinforced_update(&mut s, &signals, &[0], 0.9).unwrap();
        assert_eq!((s.units[0].mu[0], s.units[0].sigma[0]), (1.5, 0.4));
    }

    #[test]
    fn literal_divisor_uses_batch_size() {
        let hyper = HyperParams {
            confidence_enabled: false,
            confidence_normalized: false,
            literal_batch_divisor: true,
            ..Default::default()
        };
        let mut s = store_with(&[1.0, 1.0], &[0.0, 0.0], hyper);
        let signals = Matrix::from_rows(1, &[[2.0], [5.0], [5.0], [5.0]]).unwrap();
        reinforced_update(&mut s, &signals, &[0, 1, 1, 1], 0.5).unwrap();
        assert_eq!(s.units[0].mu[0], 0.5 + 0.5 * (2.0 / 4.0));
        assert_eq!(s.units[0].mu[1], 0.5 + 0.5 * (15.0 / 4.0));
    }

    #[test]
    fn requires_trained_store() {
        let mut s = init_memory(1, 2, HyperParams::default()).unwrap();
        let signals = Matrix::from_rows(1, &[[1.0]]).unwrap();
        assert!(matches!(
            reinforced_update(&mut s, &signals, &[0], 0.9),
            Err(EmnError::NotTrained { .. })
        ));
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(50, 7, 3);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(50, 7, 3));
        assert_ne!(a, epoch_order(50, 7, 4));
    }

    #[test]
    fn best_epoch_prefers_earliest_maximum() {
        let rec = |epoch, acc| EpochRecord {
            epoch,
            agreement: None,
            accuracy: Some(acc),
            update_seconds_per_sample: 0.0,
            parameter_writes: 0,
            snapshot: None,
        };
        let h = AdaptationHistory {
            records: vec![rec(1, 0.5), rec(2, 0.8), rec(3, 0.8), rec(4, 0.7)],
            ..Default::default()
        };
        assert_eq!(h.best_epoch(), Some((2, 0.8)));
        assert_eq!(h.final_accuracy(), Some(0.7));
    }
}
