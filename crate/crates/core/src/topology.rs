//! Hybrid random graph of entrance, hub and bridging nodes.
//!
//! Node ids are assigned entrance-first, then hubs, then bridging nodes.
//! Entrances have no incoming edges. Each hub receives one edge from every
//! entrance. Each bridging node receives `bridging_in_degree` edges from
//! distinct nodes of any kind other than itself, sampled uniformly without
//! replacement. Weights are uniform on `[-1, 1]`.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)`. Draws happen in
//! node-id order: every hub's entrance weights (hub by hub, entrance by
//! entrance), then for each bridging node its predecessor sample (partial
//! Fisher-Yates over the id-ordered pool) followed by one weight per sampled
//! predecessor in sample order. Predecessor lists are then stored sorted by
//! predecessor id, which fixes the summation order used during propagation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EmnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Entrance,
    Hub,
    Bridging,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub feature_dim: usize,
    pub hub_count: usize,
    pub bridging_count: usize,
    pub bridging_in_degree: usize,
    pub seed: u64,
}

impl TopologyConfig {
    pub const DEFAULT_HUBS: usize = 50;
    pub const DEFAULT_BRIDGING: usize = 50;
    pub const DEFAULT_IN_DEGREE: usize = 30;

    /// Default network scale (50 hubs, 50 bridging nodes, in-degree 30) for a given input width.
    pub fn with_feature_dim(feature_dim: usize, seed: u64) -> Self {
        TopologyConfig {
            feature_dim,
            hub_count: Self::DEFAULT_HUBS,
            bridging_count: Self::DEFAULT_BRIDGING,
            bridging_in_degree: Self::DEFAULT_IN_DEGREE,
            seed,
        }
    }

    pub fn node_count(&self) -> usize {
        self.feature_dim + self.hub_count + self.bridging_count
    }

    /// Hub plus bridging nodes: the nodes that carry memory.
    pub fn memory_node_count(&self) -> usize {
        self.hub_count + self.bridging_count
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(EmnError::Config("feature_dim must be positive".into()));
        }
        if self.hub_count == 0 {
            return Err(EmnError::Config("hub_count must be positive".into()));
        }
        if self.bridging_count > 0 {
            if self.bridging_in_degree == 0 {
                return Err(EmnError::Config(
                    "bridging_in_degree must be positive when bridging nodes exist".into(),
                ));
            }
            let available = self.node_count() - 1;
            if self.bridging_in_degree > available {
                return Err(EmnError::Config(format!(
                    "bridging_in_degree {} exceeds the {} distinct predecessors available",
                    self.bridging_in_degree, available
                )));
            }
        }
        Ok(())
    }

    pub fn kind_of(&self, node: usize) -> NodeKind {
        if node < self.feature_dim {
            NodeKind::Entrance
        } else if node < self.feature_dim + self.hub_count {
            NodeKind::Hub
        } else {
            NodeKind::Bridging
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    config: TopologyConfig,
    node_kinds: Vec<NodeKind>,
    predecessors: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopologyStats {
    pub entrance_count: usize,
    pub hub_count: usize,
    pub bridging_count: usize,
    pub edge_count: usize,
    pub weight_min: f64,
    pub weight_max: f64,
    pub weight_mean: f64,
}

pub fn build_topology(cfg: &TopologyConfig) -> Result<NetworkTopology> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.node_count();
    let mut predecessors: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];

    for preds in &mut predecessors[cfg.feature_dim..cfg.feature_dim + cfg.hub_count] {
        *preds = (0..cfg.feature_dim)
            .map(|e| (e, rng.random_range(-1.0..=1.0)))
            .collect();
    }

    let mut pool: Vec<usize> = Vec::with_capacity(n - 1);
    #[allow(clippy::needless_range_loop)]
    for node in cfg.feature_dim + cfg.hub_count..n {
        pool.clear();
        pool.extend((0..n).filter(|&j| j != node));
        let k = cfg.bridging_in_degree;
        for i in 0..k {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        let mut preds: Vec<(usize, f64)> = pool[..k].iter().map(|&p| (p, rng.random_range(-1.0..=1.0))).collect();
        preds.sort_unstable_by_key(|&(p, _)| p);
        predecessors[node] = preds;
    }

    Ok(NetworkTopology {
        config: *cfg,
        node_kinds: (0..n).map(|i| cfg.kind_of(i)).collect(),
        predecessors,
    })
}

impl NetworkTopology {
    /// Assembles a topology from explicit predecessor lists, checking every
    /// structural invariant. Lists are re-sorted by predecessor id.
    pub fn from_predecessors(config: TopologyConfig, mut predecessors: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        config.validate()?;
        let n = config.node_count();
        if predecessors.len() != n {
            return Err(EmnError::dim(n, predecessors.len(), "predecessor list count"));
        }
        let mut seen = vec![usize::MAX; n];
        for (node, preds) in predecessors.iter_mut().enumerate() {
            preds.sort_by_key(|&(p, _)| p);
            for &(p, w) in preds.iter() {
                if p >= n {
                    return Err(EmnError::Config(format!("node {node}: predecessor {p} out of range")));
                }
                if p == node {
                    return Err(EmnError::Config(format!("node {node}: self-loop")));
                }
                if seen[p] == node {
                    return Err(EmnError::Config(format!("node {node}: duplicate predecessor {p}")));
                }
                seen[p] = node;
                if !(-1.0..=1.0).contains(&w) {
                    return Err(EmnError::Config(format!("node {node}: weight {w} outside [-1, 1]")));
                }
            }
            match config.kind_of(node) {
                NodeKind::Entrance if !preds.is_empty() => {
                    return Err(EmnError::Config(format!("entrance {node} has incoming edges")));
                }
                NodeKind::Hub => {
                    let all_entrances =
                        preds.len() == config.feature_dim && preds.iter().enumerate().all(|(i, &(p, _))| p == i);
                    if !all_entrances {
                        return Err(EmnError::Config(format!(
                            "hub {node} must receive exactly one edge from every entrance"
                        )));
                    }
                }
                NodeKind::Bridging if preds.len() != config.bridging_in_degree => {
                    return Err(EmnError::Config(format!(
                        "bridging node {node} has in-degree {}, expected {}",
                        preds.len(),
                        config.bridging_in_degree
                    )));
                }
                _ => {}
            }
        }
        Ok(NetworkTopology {
            config,
            node_kinds: (0..n).map(|i| config.kind_of(i)).collect(),
            predecessors,
        })
    }

    pub fn config(&self) -> &TopologyConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn node_count(&self) -> usize {
        self.node_kinds.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn memory_node_count(&self) -> usize {
        self.config.memory_node_count()
    }

    pub fn node_kinds(&self) -> &[NodeKind] {
        &self.node_kinds
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.node_kinds[node]
    }

    /// `(predecessor id, weight)` pairs feeding `node`, sorted by predecessor id.
    pub fn predecessors(&self, node: usize) -> &[(usize, f64)] {
        &self.predecessors[node]
    }

    pub fn edge_count(&self) -> usize {
        self.predecessors.iter().map(Vec::len).sum()
    }

    /// All edges as `(source, target, weight)`, grouped by target in id order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.predecessors
            .iter()
            .enumerate()
            .flat_map(|(dst, preds)| preds.iter().map(move |&(src, w)| (src, dst, w)))
    }

    pub fn stats(&self) -> TopologyStats {
        topology_stats(self)
    }
}

pub fn topology_stats(t: &NetworkTopology) -> TopologyStats {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut edges = 0usize;
    for (_, _, w) in t.edges() {
        min = min.min(w);
        max = max.max(w);
        sum += w;
        edges += 1;
    }
    let count = |k: NodeKind| t.node_kinds.iter().filter(|&&x| x == k).count();
    TopologyStats {
        entrance_count: count(NodeKind::Entrance),
        hub_count: count(NodeKind::Hub),
        bridging_count: count(NodeKind::Bridging),
        edge_count: edges,
        weight_min: if edges > 0 { min } else { 0.0 },
        weight_max: if edges > 0 { max } else { 0.0 },
        weight_mean: if edges > 0 { sum / edges as f64 } else { 0.0 },
    }
}
