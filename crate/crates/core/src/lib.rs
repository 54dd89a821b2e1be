//! Elastic memory network: a gradient-free classifier over frozen features.
//!
//! Features enter a seeded random graph and propagate as thresholded impulses
//! for a fixed number of rounds. Every hub and bridging node remembers, per
//! class, a Gaussian over the total signal it emitted. Prediction fuses the
//! node posteriors weighted by each node's confidence. On an unlabeled target
//! domain the model labels its own data and reinforces those memories with
//! confidence-weighted updates, with no gradients anywhere.

pub mod adaptation;
pub mod dataio;
pub mod error;
pub mod harness;
pub mod inference;
pub mod matrix;
pub mod memory;
pub mod propagation;
pub mod topology;

pub use adaptation::{adapt, pseudo_label, reinforced_update, AdaptationConfig, AdaptationHistory, EpochRecord};
pub use dataio::{
    load_model, read_csv, read_emnf, save_model, synth_shifted_blobs, write_csv, write_emnf, FeatureDataset,
    SynthConfig,
};
pub use error::{EmnError, Result};
pub use harness::{
    baseline_gnb_eval, baseline_gnb_train, bench, evaluate, run_ablation, run_pipeline, BenchConfig, BenchReport,
    EvalReport, PipelineConfig,
};
pub use inference::{predict, predict_batch, EmnModel, Prediction};
pub use matrix::Matrix;
pub use memory::{
    fuzzy_likelihood, init_memory, log_fuzzy_likelihood, node_posterior, node_prediction, supervised_update,
    HyperParams, MemoryStore,
};
pub use propagation::{propagate, propagate_batch, propagate_trace, MemorySignalVector, PropagationTrace};
pub use topology::{build_topology, topology_stats, NetworkTopology, NodeKind, TopologyConfig};
