//! Per-node, per-class Gaussian memory.
//!
//! Each memory-bearing node keeps `(mu, sigma)` for every class. `sigma` is
//! the EMA of the mean absolute deviation of the node's memory signal around
//! `mu`, and it is used directly wherever the Gaussian variance term appears.
//! Class likelihoods come either from the blurred ("fuzzy") closed form or
//! from the plain Gaussian density; posteriors are formed in log space.

use serde::{Deserialize, Serialize};

use crate::error::{EmnError, Result};
use crate::matrix::Matrix;

/// Lower bound applied to `sigma` in the plain Gaussian density, which is
/// undefined at zero spread.
pub const DENSITY_SIGMA_FLOOR: f64 = 1e-9;

/// Smallest reported confidence; keeps fusion weights strictly positive.
pub const CONFIDENCE_FLOOR: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// EMA coefficient between batches.
    pub beta: f64,
    /// Variance of the blur kernel.
    pub sigma1: f64,
    pub batch_size: usize,
    /// Propagation rounds `T`.
    pub rounds: usize,
    pub fuzzy_enabled: bool,
    pub confidence_enabled: bool,
    /// Divide reinforced updates by the summed confidence instead of the class count.
    pub confidence_normalized: bool,
    /// Divide reinforced updates by the full batch size.
    pub literal_batch_divisor: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            beta: 0.9,
            sigma1: 1.0,
            batch_size: 64,
            rounds: 3,
            fuzzy_enabled: true,
            confidence_enabled: true,
            confidence_normalized: true,
            literal_batch_divisor: false,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        if self.fuzzy_enabled && !(self.sigma1 > 0.0 && self.sigma1.is_finite()) {
            return Err(EmnError::Config(format!(
                "sigma1 must be positive, got {}",
                self.sigma1
            )));
        }
        if self.batch_size == 0 {
            return Err(EmnError::Config("batch_size must be positive".into()));
        }
        if self.rounds == 0 {
            return Err(EmnError::Config("rounds must be positive".into()));
        }
        Ok(())
    }

    /// Log of the class likelihood used for retrieval under the active flags.
    pub fn log_likelihood(&self, mu: f64, sigma: f64, m_hat: f64) -> f64 {
        if self.fuzzy_enabled {
            log_fuzzy_unchecked(mu, sigma, self.sigma1, m_hat)
        } else {
            log_gaussian_density(mu, sigma, m_hat)
        }
    }
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&beta) {
        return Err(EmnError::Config(format!("beta must lie in [0, 1), got {beta}")));
    }
    Ok(())
}

fn check_sigma1(sigma1: f64) -> Result<()> {
    if sigma1 > 0.0 {
        Ok(())
    } else {
        Err(EmnError::Config(format!("sigma1 must be positive, got {sigma1}")))
    }
}

/// Blurred class likelihood `sqrt(s1) / (2 sqrt(2s + s1)) * exp(-(m - mu)^2 / (2s + s1))`.
pub fn fuzzy_likelihood(mu: f64, sigma: f64, sigma1: f64, m_hat: f64) -> Result<f64> {
    check_sigma1(sigma1)?;
    let spread = 2.0 * sigma + sigma1;
    let d = m_hat - mu;
    Ok(sigma1.sqrt() / (2.0 * spread.sqrt()) * (-(d * d) / spread).exp())
}

/// Natural log of [`fuzzy_likelihood`], without forming the exponential.
pub fn log_fuzzy_likelihood(mu: f64, sigma: f64, sigma1: f64, m_hat: f64) -> Result<f64> {
    check_sigma1(sigma1)?;
    Ok(log_fuzzy_unchecked(mu, sigma, sigma1, m_hat))
}

fn log_fuzzy_unchecked(mu: f64, sigma: f64, sigma1: f64, m_hat: f64) -> f64 {
    let spread = 2.0 * sigma + sigma1;
    let d = m_hat - mu;
    0.5 * sigma1.ln() - std::f64::consts::LN_2 - 0.5 * spread.ln() - d * d / spread
}

/// Log of the plain Gaussian density with `sigma` in the variance slot.
pub fn log_gaussian_density(mu: f64, sigma: f64, m_hat: f64) -> f64 {
    let s = sigma.max(DENSITY_SIGMA_FLOOR);
    let d = m_hat - mu;
    -0.5 * (2.0 * std::f64::consts::PI * s).ln() - d * d / (2.0 * s)
}

/// Numerically stable softmax over log-weights.
pub fn softmax_from_logs(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianClassMemory {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub initialized: Vec<bool>,
}

impl GaussianClassMemory {
    pub fn new(class_count: usize) -> Self {
        GaussianClassMemory {
            mu: vec![0.0; class_count],
            sigma: vec![0.0; class_count],
            initialized: vec![false; class_count],
        }
    }

    pub fn class_count(&self) -> usize {
        self.mu.len()
    }

    pub fn is_ready(&self) -> bool {
        self.initialized.iter().all(|&b| b)
    }

    fn ensure_ready(&self, node: usize) -> Result<()> {
        match self.initialized.iter().position(|&b| !b) {
            Some(class) => Err(EmnError::NotTrained { node, class }),
            None => Ok(()),
        }
    }

    /// Per-class log-likelihoods of `m_hat` under the active flags.
    pub fn log_likelihoods(&self, m_hat: f64, hyper: &HyperParams) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .map(|(&mu, &s)| hyper.log_likelihood(mu, s, m_hat))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodePrediction {
    pub class: usize,
    pub confidence: f64,
    pub posterior: Vec<f64>,
}

pub fn node_posterior(unit: &GaussianClassMemory, m_hat: f64, hyper: &HyperParams) -> Result<Vec<f64>> {
    unit.ensure_ready(0)?;
    Ok(softmax_from_logs(&unit.log_likelihoods(m_hat, hyper)))
}

pub fn node_prediction(unit: &GaussianClassMemory, m_hat: f64, hyper: &HyperParams) -> Result<NodePrediction> {
    unit.ensure_ready(0)?;
    Ok(predict_unit(unit, m_hat, hyper))
}

pub(crate) fn predict_unit(unit: &GaussianClassMemory, m_hat: f64, hyper: &HyperParams) -> NodePrediction {
    let logs = unit.log_likelihoods(m_hat, hyper);
    let posterior = softmax_from_logs(&logs);
    let class = argmax(&posterior);
    let confidence = logs[class].exp().max(CONFIDENCE_FLOOR);
    NodePrediction {
        class,
        confidence,
        posterior,
    }
}

/// How the weighted class sum is normalized in an EMA step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Divisor {
    /// Number of batch samples carrying the class.
    ClassCount,
    /// Full batch size.
    BatchSize,
    /// Sum of the per-sample weights.
    WeightSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    pub units: Vec<GaussianClassMemory>,
    pub class_count: usize,
    pub hyper: HyperParams,
}

pub fn init_memory(node_count: usize, class_count: usize, hyper: HyperParams) -> Result<MemoryStore> {
    if node_count == 0 {
        return Err(EmnError::Config("memory needs at least one node".into()));
    }
    if class_count == 0 {
        return Err(EmnError::Config("class_count must be positive".into()));
    }
    hyper.validate()?;
    Ok(MemoryStore {
        units: vec![GaussianClassMemory::new(class_count); node_count],
        class_count,
        hyper,
    })
}

impl MemoryStore {
    pub fn node_count(&self) -> usize {
        self.units.len()
    }

    pub fn is_ready(&self) -> bool {
        self.units.iter().all(GaussianClassMemory::is_ready)
    }

    pub fn ensure_ready(&self) -> Result<()> {
        for (i, u) in self.units.iter().enumerate() {
            u.ensure_ready(i)?;
        }
        Ok(())
    }

    pub(crate) fn check_batch(&self, signals: &Matrix, labels: &[usize]) -> Result<()> {
        if signals.cols() != self.node_count() {
            return Err(EmnError::dim(
                self.node_count(),
                signals.cols(),
                "signal matrix columns",
            ));
        }
        if labels.len() != signals.rows() {
            return Err(EmnError::dim(signals.rows(), labels.len(), "label count"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.class_count) {
            return Err(EmnError::LabelRange {
                label: bad as i64,
                class_count: self.class_count,
            });
        }
        Ok(())
    }

    /// Row indices grouped by class, in batch order.
    pub(crate) fn group_by_class(&self, labels: &[usize]) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.class_count];
        for (b, &l) in labels.iter().enumerate() {
            groups[l].push(b);
        }
        groups
    }

    /// One EMA step for class `class` on every node. `weight(node, m_hat)`
    /// scales each sample's contribution. Never-initialized `(node, class)`
    /// pairs are seeded with the plain batch mean and mean absolute deviation.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn ema_class_step<F>(
        &mut self,
        signals: &Matrix,
        rows: &[usize],
        class: usize,
        beta: f64,
        batch_len: usize,
        divisor: Divisor,
        weight: F,
    ) -> u64
    where
        F: Fn(&GaussianClassMemory, usize, f64) -> f64,
    {
        let mut writes = 0;
        let count = rows.len() as f64;
        let mut weights = vec![0.0; rows.len()];
        for (node, unit) in self.units.iter_mut().enumerate() {
            if !unit.initialized[class] {
                let mean = rows.iter().map(|&b| signals.get(b, node)).sum::<f64>() / count;
                let mad = rows.iter().map(|&b| (signals.get(b, node) - mean).abs()).sum::<f64>() / count;
                unit.mu[class] = mean;
                unit.sigma[class] = mad;
                unit.initialized[class] = true;
                writes += 1;
                continue;
            }
            for (w, &b) in weights.iter_mut().zip(rows) {
                *w = weight(unit, class, signals.get(b, node));
            }
            let denom = match divisor {
                Divisor::ClassCount => count,
                Divisor::BatchSize => batch_len as f64,
                Divisor::WeightSum => weights.iter().sum(),
            };
            if denom.is_nan() || denom <= 0.0 {
                continue;
            }
            let weighted_mean = rows
                .iter()
                .zip(&weights)
                .map(|(&b, &w)| w * signals.get(b, node))
                .sum::<f64>()
                / denom;
            let mu = beta * unit.mu[class] + (1.0 - beta) * weighted_mean;
            let weighted_dev = rows
                .iter()
                .zip(&weights)
                .map(|(&b, &w)| w * (signals.get(b, node) - mu).abs())
                .sum::<f64>()
                / denom;
            unit.mu[class] = mu;
            unit.sigma[class] = beta * unit.sigma[class] + (1.0 - beta) * weighted_dev;
            writes += 1;
        }
        writes
    }

    /// Rows of `(node_id, class, mu, sigma)` for initialized entries.
    pub fn snapshot_rows(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        self.units.iter().enumerate().flat_map(|(i, u)| {
            (0..u.class_count())
                .filter(move |&k| u.initialized[k])
                .map(move |k| (i, k, u.mu[k], u.sigma[k]))
        })
    }

    /// Writes the memory snapshot CSV (`node_id,class,mu,sigma`). `node_offset`
    /// is added to the memory index so ids match topology node ids.
    pub fn write_snapshot_csv<W: std::io::Write>(&self, out: W, node_offset: usize) -> Result<()> {
        let wrap = |e: csv::Error| EmnError::io("<output>", e.into());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node_id", "class", "mu", "sigma"]).map_err(wrap)?;
        for (i, k, mu, s) in self.snapshot_rows() {
            w.write_record([
                (i + node_offset).to_string(),
                k.to_string(),
                format!("{mu:.16e}"),
                format!("{s:.16e}"),
            ])
            .map_err(wrap)?;
        }
        w.flush().map_err(|e| EmnError::io("<output>", e))
    }
}

/// Labeled EMA update: per class present in the batch, `mu` moves toward the
/// class batch mean, then `sigma` toward the mean absolute deviation about the
/// updated `mu`. Returns the number of `(node, class)` parameter pairs written.
pub fn supervised_update(store: &mut MemoryStore, signals: &Matrix, labels: &[usize], beta: f64) -> Result<u64> {
    check_beta(beta)?;
    store.check_batch(signals, labels)?;
    let groups = store.group_by_class(labels);
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
            labels.len(),
            Divisor::ClassCount,
            |_, _, _| 1.0,
        );
    }
    Ok(writes)
}
