//! Time-decayed frame affinity graph.
//!
//! Nodes are frames; node `i` is connected to every `j` with
//! `0 < |i − j| ≤ window`. Each stored edge carries
//!
//! ```text
//! E_ij = [α·cos(clip_i, clip_j) + (1 − α)·exp(−‖flow_i − flow_j‖₂)] / (1 + γ·|i − j|)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{check_alpha, FeatureError, FrameFeatures};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error(transparent)]
    Alpha(#[from] FeatureError),
    #[error("time decay gamma must be finite and non-negative, got {0}")]
    InvalidGamma(f64),
    #[error("neighbor window must be at least 1 frame")]
    InvalidWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub window: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            alpha: 0.75,
            gamma: 0.6,
            window: 60,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        check_alpha(self.alpha)?;
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(GraphError::InvalidGamma(self.gamma));
        }
        if self.window == 0 {
            return Err(GraphError::InvalidWindow);
        }
        Ok(())
    }
}

fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Exactly 1 for identical nonzero vectors.
fn cosine_from_parts(ab: f64, aa: f64, bb: f64) -> f64 {
    (ab / (aa * bb).sqrt().max(1e-12)).clamp(-1.0, 1.0)
}

fn distance_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn combine(cosine: f64, distance: f64, lag: usize, cfg: &GraphConfig) -> f64 {
    let similarity = cfg.alpha * cosine + (1.0 - cfg.alpha) * (-distance).exp();
    similarity / (1.0 + cfg.gamma * lag as f64)
}

/// Affinity between two frames `lag` apart.
pub fn edge_weight(
    clip_i: &[f32],
    clip_j: &[f32],
    flow_i: &[f32],
    flow_j: &[f32],
    lag: usize,
    cfg: &GraphConfig,
) -> f64 {
    let cosine = cosine_from_parts(
        dot_f32(clip_i, clip_j),
        dot_f32(clip_i, clip_i),
        dot_f32(clip_j, clip_j),
    );
    combine(cosine, distance_f32(flow_i, flow_j), lag, cfg)
}

/// Window-limited adjacency with one weight per stored `(i, j)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGraph {
    n: usize,
    window: usize,
    gamma: f64,
    neighbors: Vec<Vec<usize>>,
    weights: Vec<Vec<f64>>,
}

impl DynamicGraph {
    /// Graph with `n` nodes and the given undirected weighted edges, built
    /// with time decay `gamma`.
    ///
    /// Intended for hand-built graphs; `build_graph` is the normal entry point.
    /// Panics on self loops or out-of-range endpoints.
    pub fn from_edges(n: usize, gamma: f64, edges: &[(usize, usize, f64)]) -> Self {
        let mut pairs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut window = 0;
        for &(i, j, w) in edges {
            assert!(i < n && j < n && i != j, "invalid edge ({i}, {j})");
            pairs[i].push((j, w));
            pairs[j].push((i, w));
            window = window.max(i.abs_diff(j));
        }
        let mut neighbors = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for mut row in pairs {
            row.sort_by_key(|&(j, _)| j);
            row.dedup_by_key(|&mut (j, _)| j);
            neighbors.push(row.iter().map(|&(j, _)| j).collect());
            weights.push(row.iter().map(|&(_, w)| w).collect());
        }
        Self {
            n,
            window,
            gamma,
            neighbors,
            weights,
        }
    }

    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        Self::from_edges(n, 0.0, &[])
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Lag-only part of an edge weight, `1 / (1 + γ·|i − j|)`.
    pub fn decay(&self, i: usize, j: usize) -> f64 {
        1.0 / (1.0 + self.gamma * i.abs_diff(j) as f64)
    }

    /// Neighbors of `i` in increasing frame order.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Weights aligned with [`neighbors`](Self::neighbors).
    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.neighbors[i]
            .binary_search(&j)
            .ok()
            .map(|k| self.weights[i][k])
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Each undirected edge once, as `(i, j, w)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            self.neighbors[i]
                .iter()
                .zip(&self.weights[i])
                .filter(move |(&j, _)| j > i)
                .map(move |(&j, &w)| (i, j, w))
        })
    }
}

pub fn build_graph(frames: &FrameFeatures, cfg: &GraphConfig) -> Result<DynamicGraph, GraphError> {
    cfg.validate()?;
    let n = frames.len();
    let mut neighbors = vec![Vec::new(); n];
    let mut weights: Vec<Vec<f64>> = vec![Vec::new(); n];
    // Same arithmetic as `edge_weight`, with squared clip norms computed once per frame.
    let norms: Vec<f64> = (0..n)
        .map(|i| dot_f32(frames.clip(i), frames.clip(i)))
        .collect();
    // Upper triangle is computed once and mirrored, so symmetry is exact.
    for i in 0..n {
        let hi = (i + cfg.window).min(n - 1);
        for j in i + 1..=hi {
            let cosine =
                cosine_from_parts(dot_f32(frames.clip(i), frames.clip(j)), norms[i], norms[j]);
            let distance = distance_f32(frames.flow(i), frames.flow(j));
            let w = combine(cosine, distance, j - i, cfg);
            neighbors[i].push(j);
            weights[i].push(w);
            neighbors[j].push(i);
            weights[j].push(w);
        }
    }
    // Lower neighbors were appended in increasing i, upper in increasing j,
    // and all lower indices precede upper ones, so rows are already sorted.
    Ok(DynamicGraph {
        n,
        window: cfg.window,
        gamma: cfg.gamma,
        neighbors,
        weights,
    })
}

/// Debug dump of a graph for heat-map plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub n: usize,
    pub window: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub edges: Vec<(usize, usize, f64)>,
}

impl GraphDump {
    pub fn new(graph: &DynamicGraph, cfg: &GraphConfig) -> Self {
        Self {
            n: graph.len(),
            window: graph.window(),
            gamma: cfg.gamma,
            alpha: cfg.alpha,
            edges: graph.edges().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{CLIP_DIM, FLOW_DIM};

    fn unit(i: usize) -> Vec<f32> {
        let mut v = vec![0.0; CLIP_DIM];
        v[i] = 1.0;
        v
    }

    fn identical_frames(t: usize) -> FrameFeatures {
        FrameFeatures::from_frames("v", 30.0, &vec![unit(0); t], &vec![vec![0.0; FLOW_DIM]; t])
            .unwrap()
    }

    #[test]
    fn self_similarity_is_one() {
        let cfg = GraphConfig::default();
        let c = unit(3);
        let f = vec![0.5; FLOW_DIM];
        assert_eq!(edge_weight(&c, &c, &f, &f, 0, &cfg), 1.0);
    }

    #[test]
    fn decay_at_lag_five() {
        let cfg = GraphConfig::default();
        let c = unit(3);
        let f = vec![0.0; FLOW_DIM];
        assert!((edge_weight(&c, &c, &f, &f, 5, &cfg) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_clips_keep_flow_term() {
        let cfg = GraphConfig::default();
        let f = vec![1.0; FLOW_DIM];
        assert_eq!(edge_weight(&unit(0), &unit(1), &f, &f, 0, &cfg), 0.25);
    }

    #[test]
    fn single_frame_has_no_edges() {
        let g = build_graph(&identical_frames(1), &GraphConfig::default()).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.edge_count(), 0);
        assert!(g.neighbors(0).is_empty());
    }

    #[test]
    fn window_limits_edges() {
        let cfg = GraphConfig {
            window: 1,
            ..GraphConfig::default()
        };
        let g = build_graph(&identical_frames(3), &cfg).unwrap();
        let edges: Vec<_> = g.edges().map(|(i, j, _)| (i, j)).collect();
        assert_eq!(edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn identical_frames_lag_one_weight() {
        let g = build_graph(&identical_frames(5), &GraphConfig::default()).unwrap();
        for i in 0..4 {
            assert!((g.weight(i, i + 1).unwrap() - 0.625).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let frames = identical_frames(2);
        let bad_gamma = GraphConfig {
            gamma: -1.0,
            ..GraphConfig::default()
        };
        assert!(matches!(
            build_graph(&frames, &bad_gamma),
            Err(GraphError::InvalidGamma(_))
        ));
        let bad_window = GraphConfig {
            window: 0,
            ..GraphConfig::default()
        };
        assert!(matches!(
            build_graph(&frames, &bad_window),
            Err(GraphError::InvalidWindow)
        ));
    }
}
