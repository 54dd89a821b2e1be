//! Evaluation, timing, the Gaussian naive Bayes reference and the ablation runner.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::adaptation::{adapt, adapt_counted, AdaptationConfig, AdaptationHistory};
use crate::dataio::FeatureDataset;
use crate::error::{EmnError, Result};
use crate::inference::{predict_batch, predict_batch_counted, EmnModel};
use crate::memory::{argmax, HyperParams};
use crate::propagation::OpCounter;
use crate::topology::TopologyConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    /// `None` for classes absent from the dataset.
    pub per_class_accuracy: Vec<Option<f64>>,
}

impl EvalReport {
    pub fn from_predictions(predicted: &[usize], truth: &[usize], class_count: usize) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(EmnError::dim(truth.len(), predicted.len(), "prediction count"));
        }
        let mut confusion = vec![vec![0u64; class_count]; class_count];
        for (&p, &t) in predicted.iter().zip(truth) {
            if t >= class_count || p >= class_count {
                return Err(EmnError::LabelRange {
                    label: t.max(p) as i64,
                    class_count,
                });
            }
            confusion[t][p] += 1;
        }
        let total = truth.len() as u64;
        let hits: u64 = (0..class_count).map(|k| confusion[k][k]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[k] as f64 / n as f64)
            })
            .collect();
        Ok(EvalReport {
            accuracy: if total > 0 { hits as f64 / total as f64 } else { 0.0 },
            confusion,
            per_class_accuracy,
        })
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// `class,count,correct,accuracy` rows followed by the confusion matrix.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "metric,value")?;
        writeln!(out, "accuracy,{}", self.accuracy)?;
        writeln!(out, "samples,{}", self.total())?;
        writeln!(out)?;
        writeln!(out, "class,count,correct,accuracy")?;
        for (k, row) in self.confusion.iter().enumerate() {
            let n: u64 = row.iter().sum();
            let acc = self.per_class_accuracy[k].map_or(String::new(), |a| a.to_string());
            writeln!(out, "{k},{n},{},{acc}", row[k])?;
        }
        writeln!(out)?;
        let header: Vec<String> = (0..self.confusion.len()).map(|k| format!("pred_{k}")).collect();
        writeln!(out, "truth,{}", header.join(","))?;
        for (k, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(out, "{k},{}", cells.join(","))?;
        }
        Ok(())
    }
}

fn check_labeled(dataset: &FeatureDataset, class_count: usize) -> Result<&[usize]> {
    let labels = dataset.labels()?;
    let declared = dataset.class_count.unwrap_or(0);
    if declared > class_count || labels.iter().any(|&l| l >= class_count) {
        return Err(EmnError::ClassCountMismatch {
            model: class_count,
            dataset: declared.max(labels.iter().max().map_or(0, |m| m + 1)),
        });
    }
    Ok(labels)
}

pub fn evaluate(model: &EmnModel, dataset: &FeatureDataset) -> Result<EvalReport> {
    let truth = check_labeled(dataset, model.class_count())?;
    let predicted: Vec<usize> = predict_batch(model, &dataset.features)?
        .into_iter()
        .map(|p| p.label)
        .collect();
    EvalReport::from_predictions(&predicted, truth, model.class_count())
}

// ---------------------------------------------------------------------------
// Pipeline

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub hub_count: usize,
    pub bridging_count: usize,
    pub bridging_in_degree: usize,
    pub topology_seed: u64,
    /// Shuffle seed for the single labeled pass over the source set.
    pub train_seed: u64,
    pub hyper: HyperParams,
    pub adapt: AdaptationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            hub_count: TopologyConfig::DEFAULT_HUBS,
            bridging_count: TopologyConfig::DEFAULT_BRIDGING,
            bridging_in_degree: TopologyConfig::DEFAULT_IN_DEGREE,
            topology_seed: 0,
            train_seed: 0,
            hyper: HyperParams::default(),
            adapt: AdaptationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn topology(&self, feature_dim: usize) -> TopologyConfig {
        TopologyConfig {
            feature_dim,
            hub_count: self.hub_count,
            bridging_count: self.bridging_count,
            bridging_in_degree: self.bridging_in_degree,
            seed: self.topology_seed,
        }
    }
}

/// Builds a model for `source` and runs one labeled pass over it.
pub fn train_model(source: &FeatureDataset, cfg: &PipelineConfig, class_count: usize) -> Result<EmnModel> {
    let labels = check_labeled(source, class_count)?;
    let mut model = EmnModel::new(&cfg.topology(source.dim()), class_count, cfg.hyper)?;
    model.fit(&source.features, labels, Some(cfg.train_seed))?;
    model.metadata.insert("source_domain".into(), source.domain_tag.clone());
    model.metadata.insert("source_samples".into(), source.len().to_string());
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub trained: EmnModel,
    pub adapted: EmnModel,
    pub history: AdaptationHistory,
}

/// Train on `source`, then adapt on `target` (its labels, if any, only score epochs).
pub fn run_pipeline(source: &FeatureDataset, target: &FeatureDataset, cfg: &PipelineConfig) -> Result<PipelineRun> {
    let class_count = source
        .class_count
        .ok_or(EmnError::MissingLabels)?
        .max(target.class_count.unwrap_or(0));
    let trained = train_model(source, cfg, class_count)?;
    let mut adapted = trained.clone();
    let history = adapt(&mut adapted, &target.features, &cfg.adapt, target.labels.as_deref())?;
    adapted
        .metadata
        .insert("target_domain".into(), target.domain_tag.clone());
    adapted
        .metadata
        .insert("adapt_epochs".into(), cfg.adapt.epochs.to_string());
    Ok(PipelineRun {
        trained,
        adapted,
        history,
    })
}

// ---------------------------------------------------------------------------
// Bench

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub repetitions: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub shuffle_seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            repetitions: 5,
            batch_size: 64,
            beta: 0.9,
            shuffle_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub samples: usize,
    pub repetitions: usize,
    /// Median seconds per sample for one inference pass.
    pub per_sample_inference_time: f64,
    /// Median seconds per sample for one adaptation epoch.
    pub per_sample_adaptation_time: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub inference_forward_passes: u64,
    pub adaptation_forward_passes: u64,
    pub adaptation_rounds: u64,
    /// Always zero: the engine has no backward pass.
    pub backward_passes: u64,
    pub forward_passes_per_adapted_sample: f64,
    pub parameter_writes_per_adapted_sample: f64,
    pub memory_nodes: usize,
    pub hyper: HyperParams,
    pub config: BenchConfig,
}

impl BenchReport {
    pub fn ratio(&self) -> f64 {
        self.per_sample_adaptation_time / self.per_sample_inference_time
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "metric,value")?;
        writeln!(out, "samples,{}", self.samples)?;
        writeln!(out, "repetitions,{}", self.repetitions)?;
        writeln!(out, "per_sample_inference_time,{:e}", self.per_sample_inference_time)?;
        writeln!(out, "per_sample_adaptation_time,{:e}", self.per_sample_adaptation_time)?;
        writeln!(out, "adaptation_to_inference_ratio,{}", self.ratio())?;
        writeln!(out, "min_ratio,{}", self.min_ratio)?;
        writeln!(out, "max_ratio,{}", self.max_ratio)?;
        writeln!(
            out,
            "forward_passes_per_adapted_sample,{}",
            self.forward_passes_per_adapted_sample
        )?;
        writeln!(out, "backward_passes,{}", self.backward_passes)?;
        writeln!(
            out,
            "parameter_writes_per_adapted_sample,{}",
            self.parameter_writes_per_adapted_sample
        )?;
        writeln!(out, "memory_nodes,{}", self.memory_nodes)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Times one inference pass and one adaptation epoch over `target`,
/// repeated `cfg.repetitions` times on fresh copies of `model`.
pub fn bench(model: &EmnModel, target: &FeatureDataset, cfg: &BenchConfig) -> Result<BenchReport> {
    if target.is_empty() {
        return Err(EmnError::Usage("bench needs at least one sample".into()));
    }
    if cfg.repetitions == 0 {
        return Err(EmnError::Usage("bench needs at least one repetition".into()));
    }
    model.store.ensure_ready()?;
    let n = target.len();
    let adapt_cfg = AdaptationConfig {
        epochs: 1,
        batch_size: cfg.batch_size,
        beta: cfg.beta,
        shuffle_seed: cfg.shuffle_seed,
        refresh_per_epoch: true,
        snapshot_dir: None,
    };

    let mut infer_times = Vec::with_capacity(cfg.repetitions);
    let mut adapt_times = Vec::with_capacity(cfg.repetitions);
    let infer_counter = OpCounter::new();
    let adapt_counter = OpCounter::new();
    let mut writes = 0;
    for _ in 0..cfg.repetitions {
        let started = Instant::now();
        let preds = predict_batch_counted(model, &target.features, &infer_counter)?;
        infer_times.push(started.elapsed().as_secs_f64() / n as f64);
        std::hint::black_box(preds);

        let mut copy = model.clone();
        let started = Instant::now();
        let history = adapt_counted(&mut copy, &target.features, &adapt_cfg, None, &adapt_counter)?;
        adapt_times.push(started.elapsed().as_secs_f64() / n as f64);
        writes += history.records.iter().map(|r| r.parameter_writes).sum::<u64>();
    }
    let ratios: Vec<f64> = adapt_times.iter().zip(&infer_times).map(|(a, i)| a / i).collect();
    let inf = infer_counter.snapshot();
    let ad = adapt_counter.snapshot();
    let adapted_samples = (n * cfg.repetitions) as f64;
    Ok(BenchReport {
        samples: n,
        repetitions: cfg.repetitions,
        per_sample_inference_time: median(&mut infer_times),
        per_sample_adaptation_time: median(&mut adapt_times),
        min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        inference_forward_passes: inf.forward_passes,
        adaptation_forward_passes: ad.forward_passes,
        adaptation_rounds: ad.rounds,
        backward_passes: 0,
        forward_passes_per_adapted_sample: ad.forward_passes as f64 / adapted_samples,
        parameter_writes_per_adapted_sample: writes as f64 / adapted_samples,
        memory_nodes: model.store.node_count(),
        hyper: *model.hyper(),
        config: cfg.clone(),
    })
}

// ---------------------------------------------------------------------------
// Gaussian naive Bayes reference

#[derive(Debug, Clone, PartialEq)]
pub struct GnbModel {
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub present: Vec<bool>,
}

impl GnbModel {
    pub fn class_count(&self) -> usize {
        self.means.len()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let scores: Vec<f64> = (0..self.class_count())
            .map(|k| {
                if !self.present[k] {
                    return f64::NEG_INFINITY;
                }
                x.iter()
                    .zip(&self.means[k])
                    .zip(&self.variances[k])
                    .map(|((&v, &m), &s)| -0.5 * (2.0 * std::f64::consts::PI * s).ln() - (v - m).powi(2) / (2.0 * s))
                    .sum()
            })
            .collect();
        argmax(&scores)
    }
}

/// Per-class, per-feature Gaussians on raw features with uniform priors.
/// Variances get `1e-9 × (largest feature variance)` added for stability.
pub fn baseline_gnb_train(dataset: &FeatureDataset) -> Result<GnbModel> {
    let labels = dataset.labels()?;
    let classes = dataset
        .class_count
        .unwrap_or(0)
        .max(labels.iter().max().map_or(0, |m| m + 1));
    let d = dataset.dim();
    let mut sums = vec![vec![0.0; d]; classes];
    let mut counts = vec![0usize; classes];
    for (row, &l) in dataset.features.iter_rows().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(row) {
            *s += v;
        }
    }
    let means: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s.iter().map(|v| if c > 0 { v / c as f64 } else { 0.0 }).collect())
        .collect();
    let mut variances = vec![vec![0.0; d]; classes];
    for (row, &l) in dataset.features.iter_rows().zip(labels) {
        for ((acc, v), m) in variances[l].iter_mut().zip(row).zip(&means[l]) {
            *acc += (v - m).powi(2);
        }
    }
    for (var, &c) in variances.iter_mut().zip(&counts) {
        for v in var.iter_mut() {
            *v = if c > 0 { *v / c as f64 } else { 0.0 };
        }
    }
    let max_var = variances.iter().flatten().copied().fold(0.0, f64::max);
    let eps = 1e-9 * if max_var > 0.0 { max_var } else { 1.0 };
    for v in variances.iter_mut().flatten() {
        *v += eps;
    }
    Ok(GnbModel {
        means,
        variances,
        present: counts.iter().map(|&c| c > 0).collect(),
    })
}

pub fn baseline_gnb_eval(model: &GnbModel, dataset: &FeatureDataset) -> Result<EvalReport> {
    let truth = check_labeled(dataset, model.class_count())?;
    if dataset.dim() != model.means.first().map_or(0, Vec::len) {
        return Err(EmnError::dim(
            model.means.first().map_or(0, Vec::len),
            dataset.dim(),
            "feature columns",
        ));
    }
    let predicted: Vec<usize> = dataset.features.iter_rows().map(|x| model.predict(x)).collect();
    EvalReport::from_predictions(&predicted, truth, model.class_count())
}

// ---------------------------------------------------------------------------
// Ablation

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: &'static str,
    pub fuzzy: bool,
    pub confidence: bool,
    pub initial: EvalReport,
    pub adapted: EvalReport,
    pub best_epoch: Option<(usize, f64)>,
    pub delta_vs_base: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "variant,fuzzy,confidence,initial_accuracy,final_accuracy,best_epoch,best_accuracy,delta_vs_base"
        )?;
        for r in &self.rows {
            let (be, ba) = r
                .best_epoch
                .map_or((String::new(), String::new()), |(e, a)| (e.to_string(), a.to_string()));
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.variant, r.fuzzy, r.confidence, r.initial.accuracy, r.adapted.accuracy, be, ba, r.delta_vs_base
            )?;
        }
        Ok(())
    }
}

pub const ABLATION_VARIANTS: [(&str, bool, bool); 3] = [
    ("base", false, false),
    ("base+G", true, false),
    ("base+G+C", true, true),
];

/// Runs the full train-and-adapt pipeline once per variant, changing only the
/// fuzzy and confidence flags. `target` must carry labels for scoring.
pub fn run_ablation(source: &FeatureDataset, target: &FeatureDataset, base: &PipelineConfig) -> Result<AblationReport> {
    let target_labels = target.labels()?;
    let mut rows = Vec::with_capacity(ABLATION_VARIANTS.len());
    for (variant, fuzzy, confidence) in ABLATION_VARIANTS {
        let mut cfg = base.clone();
        cfg.hyper.fuzzy_enabled = fuzzy;
        cfg.hyper.confidence_enabled = confidence;
        let run = run_pipeline(source, target, &cfg)?;
        let classes = run.adapted.class_count();
        let initial = evaluate(&run.trained, target)?;
        let adapted = evaluate(&run.adapted, target)?;
        debug_assert_eq!(adapted.total() as usize, target_labels.len());
        debug_assert!(classes >= 2);
        rows.push(AblationRow {
            variant,
            fuzzy: run.adapted.hyper().fuzzy_enabled,
            confidence: run.adapted.hyper().confidence_enabled,
            initial,
            adapted,
            best_epoch: run.history.best_epoch(),
            delta_vs_base: 0.0,
        });
    }
    let base_acc = rows[0].adapted.accuracy;
    for r in &mut rows {
        r.delta_vs_base = r.adapted.accuracy - base_acc;
    }
    Ok(AblationReport { rows })
}
