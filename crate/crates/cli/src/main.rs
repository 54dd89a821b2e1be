mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use emn_core::adaptation::adapt;
use emn_core::dataio::{read_csv, read_emnf, write_csv, write_emnf};
use emn_core::harness::{
    baseline_gnb_eval, baseline_gnb_train, bench, evaluate, run_ablation, train_model, BenchConfig,
};
use emn_core::propagation::propagate_trace;
use emn_core::{
    load_model, predict_batch, save_model, synth_shifted_blobs, EmnError, EmnModel, FeatureDataset, Result, SynthConfig,
};
use serde::Serialize;

use config::{FileConfig, Knobs, Settings};

#[derive(Parser, Debug)]
#[command(name = "emn", version, about = "Gradient-free elastic memory network classifier")]
struct Cli {
    /// TOML file of default knob values; command-line flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for batch propagation (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Emnf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a network and store labeled source memories
    Train {
        #[arg(long)]
        source: PathBuf,
        /// Model file to write
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Self-supervised adaptation of a trained model to an unlabeled target set
    Adapt {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Adapted model file to write
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch history CSV (default: standard output)
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Predicted labels and fused posteriors for every row
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Accuracy and confusion matrix on a labeled set
    Eval {
        #[arg(long, required_unless_present = "baseline")]
        model: Option<PathBuf>,
        #[arg(long)]
        target: PathBuf,
        /// Score a Gaussian naive Bayes reference trained on --source instead
        #[arg(long, requires = "source")]
        baseline: bool,
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Generate a shifted Gaussian-blob source/target pair
    Synth {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        dim: usize,
        #[arg(long, default_value_t = 200)]
        samples_per_class: usize,
        #[arg(long, default_value_t = 1.0)]
        mean_scale: f64,
        #[arg(long, default_value_t = 1.25)]
        spread: f64,
        #[arg(long, default_value_t = 8.0)]
        shift: f64,
    },
    /// Time inference against one adaptation epoch
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON record file (default: standard error)
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Train and adapt with the blur and confidence switches toggled
    Ablate {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Per-node, per-class memory as CSV
    ExportMemory {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Round-by-round node outputs for one target row
    Trace {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 0)]
        row: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

fn exit_code(err: &EmnError) -> u8 {
    match err {
        EmnError::Config(_) | EmnError::Usage(_) => 2,
        EmnError::NotTrained { .. }
        | EmnError::SchemaVersion { .. }
        | EmnError::Integrity { .. }
        | EmnError::Model(_)
        | EmnError::ClassCountMismatch { .. } => 4,
        _ => 3,
    }
}

fn read_dataset(path: &Path, format: Option<Format>) -> Result<FeatureDataset> {
    let fmt = format.unwrap_or(match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("emnf") => Format::Emnf,
        _ => Format::Csv,
    });
    match fmt {
        Format::Csv => read_csv(path),
        Format::Emnf => read_emnf(path),
    }
}

/// Model files that cannot be read count as model errors.
fn open_model(path: &Path) -> Result<EmnModel> {
    load_model(path).map_err(|e| match e {
        EmnError::Io { .. } => EmnError::Model(e.to_string()),
        other => other,
    })
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| EmnError::io(p, e))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn io_err(out: Option<&Path>) -> impl Fn(std::io::Error) -> EmnError + '_ {
    move |e| EmnError::io(out.unwrap_or(Path::new("<stdout>")), e)
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    path.map_or(Ok(FileConfig::default()), FileConfig::load)
}

#[derive(Serialize)]
struct BenchRecord<'a> {
    schema_version: u64,
    kind: &'static str,
    report: &'a emn_core::BenchReport,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| EmnError::Usage(format!("--threads: {e}")))?;
    }
    let file = load_file_config(cli.config.as_deref())?;

    match cli.command {
        Command::Train {
            source,
            out,
            format,
            knobs,
        } => {
            let settings = Settings::resolve(&file, &knobs)?;
            let src = read_dataset(&source, format)?;
            let classes = src.class_count.ok_or(EmnError::MissingLabels)?;
            let model = train_model(&src, &settings.pipeline, classes)?;
            save_model(&model, &out)?;
            let acc = evaluate(&model, &src)?.accuracy;
            eprintln!(
                "trained on {} samples, {classes} classes; source accuracy {acc:.4}",
                src.len()
            );
        }
        Command::Adapt {
            model,
            target,
            out,
            history,
            format,
            knobs,
        } => {
            let settings = Settings::resolve(&file, &knobs)?;
            let mut m = open_model(&model)?;
            let mut hyper = *m.hyper();
            settings.override_retrieval(&file, &knobs, &mut hyper)?;
            m.store.hyper = hyper;
            let tgt = read_dataset(&target, format)?;
            let mut cfg = settings.pipeline.adapt.clone();
            if knobs.batch_size.or(file.batch_size).is_none() {
                cfg.batch_size = hyper.batch_size;
            }
            if knobs.beta.or(file.beta).is_none() {
                cfg.beta = hyper.beta;
            }
            let h = adapt(&mut m, &tgt.features, &cfg, tgt.labels.as_deref())?;
            m.metadata.insert("target_domain".into(), tgt.domain_tag.clone());
            m.metadata.insert("adapt_epochs".into(), cfg.epochs.to_string());
            save_model(&m, &out)?;

            let dest = history.as_deref();
            let mut w = sink(dest)?;
            let fmt = |v: Option<f64>| v.map_or(String::new(), |a| a.to_string());
            (|| {
                writeln!(w, "epoch,agreement,accuracy,update_seconds_per_sample,parameter_writes")?;
                writeln!(w, "0,,{},,0", fmt(h.initial_accuracy))?;
                for r in &h.records {
                    writeln!(
                        w,
                        "{},{},{},{:e},{}",
                        r.epoch,
                        fmt(r.agreement),
                        fmt(r.accuracy),
                        r.update_seconds_per_sample,
                        r.parameter_writes
                    )?;
                }
                w.flush()
            })()
            .map_err(io_err(dest))?;
            if let (Some(last), Some((epoch, best))) = (h.final_accuracy(), h.best_epoch()) {
                eprintln!("final accuracy {last:.4}; best epoch {epoch} at {best:.4} (selected with target labels)");
            }
        }
        Command::Predict {
            model,
            target,
            out,
            format,
        } => {
            let m = open_model(&model)?;
            let tgt = read_dataset(&target, format)?;
            let preds = predict_batch(&m, &tgt.features)?;
            let dest = out.as_deref();
            let mut w = sink(dest)?;
            (|| {
                let probs: Vec<String> = (0..m.class_count()).map(|k| format!("p_{k}")).collect();
                writeln!(w, "row_index,predicted_label,{}", probs.join(","))?;
                for (i, p) in preds.iter().enumerate() {
                    let probs: Vec<String> = p.posterior.iter().map(|v| format!("{v:.16e}")).collect();
                    writeln!(w, "{i},{},{}", p.label, probs.join(","))?;
                }
                w.flush()
            })()
            .map_err(io_err(dest))?;
        }
        Command::Eval {
            model,
            target,
            baseline,
            source,
            out,
            format,
        } => {
            let tgt = read_dataset(&target, format)?;
            let report = match (baseline, model, source) {
                (true, _, Some(source)) => {
                    baseline_gnb_eval(&baseline_gnb_train(&read_dataset(&source, format)?)?, &tgt)?
                }
                (false, Some(model), _) => evaluate(&open_model(&model)?, &tgt)?,
                _ => {
                    return Err(EmnError::Usage(
                        "eval needs --model, or --baseline with --source".into(),
                    ))
                }
            };
            let dest = out.as_deref();
            report.write_csv(sink(dest)?).map_err(io_err(dest))?;
            eprintln!("accuracy {:.4}", report.accuracy);
        }
        Command::Synth {
            out,
            format,
            seed,
            classes,
            dim,
            samples_per_class,
            mean_scale,
            spread,
            shift,
        } => {
            let (src, tgt) = synth_shifted_blobs(&SynthConfig {
                class_count: classes,
                dim,
                samples_per_class,
                class_mean_scale: mean_scale,
                within_class_spread: spread,
                shift_vector_norm: shift,
                seed,
            })?;
            std::fs::create_dir_all(&out).map_err(|e| EmnError::io(&out, e))?;
            for (name, ds) in [("source", &src), ("target", &tgt)] {
                match format {
                    Format::Csv => write_csv(ds, &out.join(format!("{name}.csv")))?,
                    Format::Emnf => write_emnf(ds, &out.join(format!("{name}.emnf")))?,
                }
            }
            eprintln!(
                "wrote {} source and {} target samples to {}",
                src.len(),
                tgt.len(),
                out.display()
            );
        }
        Command::Bench {
            model,
            target,
            out,
            record,
            repetitions,
            format,
            knobs,
        } => {
            let settings = Settings::resolve(&file, &knobs)?;
            let mut m = open_model(&model)?;
            let mut hyper = *m.hyper();
            settings.override_retrieval(&file, &knobs, &mut hyper)?;
            m.store.hyper = hyper;
            let tgt = read_dataset(&target, format)?;
            let cfg = BenchConfig {
                repetitions,
                batch_size: hyper.batch_size,
                beta: hyper.beta,
                shuffle_seed: settings.seed,
            };
            let report = bench(&m, &tgt, &cfg)?;
            let dest = out.as_deref();
            report.write_csv(sink(dest)?).map_err(io_err(dest))?;
            let json = serde_json::to_string_pretty(&BenchRecord {
                schema_version: emn_core::dataio::MODEL_SCHEMA_VERSION,
                kind: "bench",
                report: &report,
            })
            .map_err(|e| EmnError::Model(e.to_string()))?;
            match record {
                Some(p) => std::fs::write(&p, json).map_err(|e| EmnError::io(&p, e))?,
                None => eprintln!("{json}"),
            }
        }
        Command::Ablate {
            source,
            target,
            out,
            format,
            knobs,
        } => {
            let settings = Settings::resolve(&file, &knobs)?;
            let src = read_dataset(&source, format)?;
            let tgt = read_dataset(&target, format)?;
            let report = run_ablation(&src, &tgt, &settings.pipeline)?;
            let dest = out.as_deref();
            report.write_csv(sink(dest)?).map_err(io_err(dest))?;
        }
        Command::ExportMemory { model, out } => {
            let m = open_model(&model)?;
            m.store.write_snapshot_csv(sink(out.as_deref())?, m.feature_dim())?;
        }
        Command::Trace {
            model,
            target,
            row,
            out,
            format,
        } => {
            let m = open_model(&model)?;
            let tgt = read_dataset(&target, format)?;
            if row >= tgt.len() {
                return Err(EmnError::Usage(format!(
                    "--row {row} out of range for {} samples",
                    tgt.len()
                )));
            }
            let (_, trace) = propagate_trace(&m.topology, tgt.features.row(row), m.hyper().rounds)?;
            trace.write_csv(sink(out.as_deref())?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(EmnError::Io { source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
