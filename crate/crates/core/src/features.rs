//! Per-node network and baseline-contagion covariates (X1..X12) and degree
//! assortativity.

use thiserror::Error;

use crate::graph::{GraphError, Network};

pub const FEATURE_NAMES: [&str; 12] =
    ["X1", "X2", "X3", "X4", "X5", "X6", "X7", "X8", "X9", "X10", "X11", "X12"];

/// Columns that are constant within a cluster.
pub const CLUSTER_LEVEL: [&str; 4] = ["X3", "X5", "X6", "X7"];

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|&n| n == name)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("assortativity undefined: network has no edges")]
    NoEdges,
    #[error("assortativity undefined: zero excess-degree variance")]
    DegenerateVariance,
    #[error("baseline-affected node {0} out of range")]
    NodeOutOfRange(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Sufficient statistics for degree assortativity. All integer, so incremental
/// updates during rewiring are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssortativityStats {
    pub edges: u64,
    /// Sum over edges of `k_u * k_v`.
    pub cross: u64,
    /// Sum over nodes of `k^2` (= sum over edge ends of `k`).
    pub sum_k2: u64,
    /// Sum over nodes of `k^3`.
    pub sum_k3: u64,
}

impl AssortativityStats {
    pub fn from_network(net: &Network) -> Self {
        let deg = net.degrees();
        let cross = net.edges().map(|(u, v)| (deg[u] * deg[v]) as u64).sum();
        let sum_k2 = deg.iter().map(|&k| (k * k) as u64).sum();
        let sum_k3 = deg.iter().map(|&k| (k * k * k) as u64).sum();
        Self { edges: net.edge_count() as u64, cross, sum_k2, sum_k3 }
    }

    /// Pearson correlation of the degrees at either end of an edge, over both
    /// orientations. Shift invariance makes this identical to the excess-degree
    /// form.
    pub fn coefficient(&self) -> Result<f64, FeatureError> {
        if self.edges == 0 {
            return Err(FeatureError::NoEdges);
        }
        let ends = 2.0 * self.edges as f64;
        let mean = self.sum_k2 as f64 / ends;
        let var = self.sum_k3 as f64 / ends - mean * mean;
        let scale = self.sum_k3 as f64 / ends;
        if var <= 1e-12 * scale.max(1.0) {
            return Err(FeatureError::DegenerateVariance);
        }
        let cov = self.cross as f64 / self.edges as f64 - mean * mean;
        Ok((cov / var).clamp(-1.0, 1.0))
    }
}

pub fn assortativity(net: &Network) -> Result<f64, FeatureError> {
    AssortativityStats::from_network(net).coefficient()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnLevel {
    Node,
    Cluster,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeatureConfig {
    /// Blocks counted by the X4 indicator.
    pub core_blocks: Vec<u16>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { core_blocks: vec![1, 5] }
    }
}

/// Row-major `n x p` covariate table for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub cluster_id: u32,
    pub names: Vec<String>,
    pub levels: Vec<ColumnLevel>,
    values: Vec<f64>,
    rows: usize,
    /// Set when assortativity was undefined and X3 was filled with 0.
    pub degenerate_assortativity: bool,
    /// False when the network carried no block labels (X4 is then all zero
    /// and should not be offered as a candidate).
    pub has_blocks: bool,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.names.len()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.names.len() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let p = self.names.len();
        &self.values[row * p..(row + 1) * p]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column_index(name)?;
        Some((0..self.rows).map(|r| self.get(r, c)).collect())
    }

    /// Appends a column (e.g. a sociodemographic covariate).
    pub fn push_column(&mut self, name: &str, level: ColumnLevel, column: &[f64]) {
        assert_eq!(column.len(), self.rows, "column length must match row count");
        let p = self.names.len();
        let mut values = Vec::with_capacity(self.rows * (p + 1));
        for r in 0..self.rows {
            values.extend_from_slice(&self.values[r * p..(r + 1) * p]);
            values.push(column[r]);
        }
        self.values = values;
        self.names.push(name.to_string());
        self.levels.push(level);
    }
}

/// Computes X1..X12 for one cluster.
///
/// For a baseline-affected node, X11/X12 consider the *other* affected nodes
/// only (its own zero distance is excluded).
pub fn compute_features(
    net: &Network,
    baseline_affected: &[usize],
    cfg: &FeatureConfig,
) -> Result<FeatureMatrix, FeatureError> {
    let n = net.node_count();
    let mut is_affected = vec![false; n];
    for &j in baseline_affected {
        if j >= n {
            return Err(FeatureError::NodeOutOfRange(j));
        }
        is_affected[j] = true;
    }
    let affected: Vec<usize> = (0..n).filter(|&j| is_affected[j]).collect();

    let deg = net.degrees();
    let comps = net.connected_components();
    let (x3, degenerate) = match assortativity(net) {
        Ok(r) => (r, false),
        Err(e) => {
            log::warn!("cluster {}: {e}; X3 set to 0", net.cluster_id());
            (0.0, true)
        }
    };
    let x5 = comps.largest() as f64;
    let c = comps.count();
    let x6 = if c == 0 { 0.0 } else { n as f64 / c as f64 };
    let x7 = c as f64;

    let mut affected_per_comp = vec![0usize; c];
    for &j in &affected {
        affected_per_comp[comps.component_of[j]] += 1;
    }

    let mut nearest = vec![u32::MAX; n];
    let mut inv_sum = vec![0.0f64; n];
    for &s in &affected {
        let dist = net.bfs_distances(&[s])?;
        for (v, d) in dist.into_iter().enumerate() {
            match d {
                Some(d) if d > 0 => {
                    nearest[v] = nearest[v].min(d);
                    inv_sum[v] += 1.0 / d as f64;
                }
                _ => {}
            }
        }
    }

    let blocks = net.blocks();
    let p = FEATURE_NAMES.len();
    let mut values = Vec::with_capacity(n * p);
    for j in 0..n {
        let k = deg[j];
        let nbrs = net.neighbors(j);
        let x2 = if k == 0 {
            0.0
        } else {
            nbrs.iter().map(|&v| deg[v as usize] as f64).sum::<f64>() / k as f64
        };
        let x4 = match blocks {
            Some(b) if cfg.core_blocks.contains(&b[j]) => 1.0,
            _ => 0.0,
        };
        let x9 = nbrs.iter().filter(|&&v| is_affected[v as usize]).count() as f64;
        let x11 = if nearest[j] == u32::MAX { 0.0 } else { 1.0 / nearest[j] as f64 };
        values.extend_from_slice(&[
            k as f64,
            x2,
            x3,
            x4,
            x5,
            x6,
            x7,
            comps.size_of_node(j) as f64,
            x9,
            affected_per_comp[comps.component_of[j]] as f64,
            x11,
            inv_sum[j],
        ]);
    }

    let levels = FEATURE_NAMES
        .iter()
        .map(|name| if CLUSTER_LEVEL.contains(name) { ColumnLevel::Cluster } else { ColumnLevel::Node })
        .collect();
    Ok(FeatureMatrix {
        cluster_id: net.cluster_id(),
        names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        levels,
        values,
        rows: n,
        degenerate_assortativity: degenerate,
        has_blocks: blocks.is_some(),
    })
}

/// Cluster-level confounder used for exposure assignment: the cluster total of
/// X9, i.e. the summed degree of baseline-affected nodes.
pub fn total_neighbor_infections(net: &Network, baseline_affected: &[usize]) -> f64 {
    baseline_affected.iter().map(|&j| net.degree(j) as f64).sum()
}
