//! Impulse propagation: each node accumulates weighted predecessor outputs in
//! its hidden state, fires the whole hidden value when it is strictly positive
//! and then resets to zero. Fired outputs accumulate into the node's memory
//! signal. Rounds are synchronous: every node reads the previous round's
//! outputs.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{EmnError, Result};
use crate::matrix::Matrix;
use crate::topology::NetworkTopology;

/// Full per-node state of one propagation run.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationState {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
    pub memory: Vec<f64>,
    pub round: usize,
}

impl PropagationState {
    /// Round-0 state: entrance outputs carry the features, everything else is zero.
    pub fn new(topology: &NetworkTopology, x: &[f64]) -> Result<Self> {
        let dim = topology.feature_dim();
        if x.len() != dim {
            return Err(EmnError::dim(dim, x.len(), "feature vector length"));
        }
        let n = topology.node_count();
        let mut output = vec![0.0; n];
        output[..dim].copy_from_slice(x);
        Ok(PropagationState {
            hidden: vec![0.0; n],
            output,
            memory: vec![0.0; n],
            round: 0,
        })
    }

    /// Advances one synchronous round. `fired` receives the ids of nodes that
    /// emitted a positive output in this round.
    pub fn step(&mut self, topology: &NetworkTopology, mut fired: Option<&mut Vec<usize>>) {
        let n = topology.node_count();
        let mut next = vec![0.0; n];
        for (i, slot) in next.iter_mut().enumerate() {
            let mut incoming = 0.0;
            for &(j, w) in topology.predecessors(i) {
                incoming += self.output[j] * w;
            }
            let h = self.hidden[i] + incoming;
            if h > 0.0 {
                *slot = h;
                self.hidden[i] = 0.0;
                self.memory[i] += h;
                if let Some(f) = fired.as_deref_mut() {
                    f.push(i);
                }
            } else {
                self.hidden[i] = h;
            }
        }
        self.output = next;
        self.round += 1;
    }

    /// Memory signals of hub and bridging nodes, in node-id order.
    pub fn memory_signals(&self, topology: &NetworkTopology) -> MemorySignalVector {
        MemorySignalVector(self.memory[topology.feature_dim()..].to_vec())
    }
}

/// Steady memory signals of the memory-bearing (hub + bridging) nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorySignalVector(pub Vec<f64>);

impl MemorySignalVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundSnapshot {
    /// 1-based round index.
    pub round: usize,
    pub activated: Vec<usize>,
    /// Output of every node (entrances included) after the round.
    pub outputs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PropagationTrace {
    pub rounds: Vec<RoundSnapshot>,
}

impl PropagationTrace {
    /// Writes `round,node_id,output` rows for every node in every round.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let wrap = |e: csv::Error| EmnError::io("<output>", e.into());
        w.write_record(["round", "node_id", "output"]).map_err(wrap)?;
        for snap in &self.rounds {
            for (node, o) in snap.outputs.iter().enumerate() {
                w.write_record([snap.round.to_string(), node.to_string(), format!("{o:.16e}")])
                    .map_err(wrap)?;
            }
        }
        w.flush().map_err(|e| EmnError::io("<output>", e))?;
        Ok(())
    }
}

/// Tallies of propagation work, shared across worker threads.
#[derive(Debug, Default)]
pub struct OpCounter {
    forward_passes: AtomicU64,
    rounds: AtomicU64,
    edge_visits: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCounts {
    pub forward_passes: u64,
    pub rounds: u64,
    pub edge_visits: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, topology: &NetworkTopology, rounds: usize) {
        self.forward_passes.fetch_add(1, Ordering::Relaxed);
        self.rounds.fetch_add(rounds as u64, Ordering::Relaxed);
        self.edge_visits
            .fetch_add((rounds * topology.edge_count()) as u64, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> OpCounts {
        OpCounts {
            forward_passes: self.forward_passes.load(Ordering::Relaxed),
            rounds: self.rounds.load(Ordering::Relaxed),
            edge_visits: self.edge_visits.load(Ordering::Relaxed),
        }
    }
}

fn check_rounds(rounds: usize) -> Result<()> {
    if rounds == 0 {
        return Err(EmnError::Config("propagation rounds must be at least 1".into()));
    }
    Ok(())
}

pub fn propagate(topology: &NetworkTopology, x: &[f64], rounds: usize) -> Result<MemorySignalVector> {
    check_rounds(rounds)?;
    let mut state = PropagationState::new(topology, x)?;
    for _ in 0..rounds {
        state.step(topology, None);
    }
    Ok(state.memory_signals(topology))
}

pub fn propagate_trace(
    topology: &NetworkTopology,
    x: &[f64],
    rounds: usize,
) -> Result<(MemorySignalVector, PropagationTrace)> {
    check_rounds(rounds)?;
    let mut state = PropagationState::new(topology, x)?;
    let mut trace = PropagationTrace::default();
    for _ in 0..rounds {
        let mut fired = Vec::new();
        state.step(topology, Some(&mut fired));
        trace.rounds.push(RoundSnapshot {
            round: state.round,
            activated: fired,
            outputs: state.output.clone(),
        });
    }
    Ok((state.memory_signals(topology), trace))
}

pub fn propagate_batch(topology: &NetworkTopology, xs: &Matrix, rounds: usize) -> Result<Matrix> {
    propagate_batch_counted(topology, xs, rounds, &OpCounter::new())
}

/// Row-parallel batch propagation; row `b` of the result is `propagate(xs[b])`.
pub fn propagate_batch_counted(
    topology: &NetworkTopology,
    xs: &Matrix,
    rounds: usize,
    counter: &OpCounter,
) -> Result<Matrix> {
    check_rounds(rounds)?;
    if xs.cols() != topology.feature_dim() {
        return Err(EmnError::dim(
            topology.feature_dim(),
            xs.cols(),
            "feature matrix columns",
        ));
    }
    let width = topology.memory_node_count();
    let mut out = Matrix::zeros(xs.rows(), width);
    if xs.rows() == 0 {
        return Ok(out);
    }
    let rows: Vec<Vec<f64>> = (0..xs.rows())
        .into_par_iter()
        .map(|b| {
            let signals = propagate(topology, xs.row(b), rounds).map(|s| s.0);
            counter.record(topology, rounds);
            signals
        })
        .collect::<Result<_>>()?;
    for (b, r) in rows.into_iter().enumerate() {
        out.row_mut(b).copy_from_slice(&r);
    }
    Ok(out)
}
