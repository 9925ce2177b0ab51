//! Training-free attention propagation over the frame graph.
//!
//! Query, key and value projections are fixed matrices with orthonormal
//! columns (Q-factors of seeded Gaussian draws). One propagation round is
//!
//! ```text
//! a_ij  = softmax_{j ∈ N(i)} ( (f_i Q)·(f_j K) / √d_a )
//! z_i   = Σ_{j ∈ N(i)} a_ij / (1 + γ·|i − j|)
//! f_i  ← f_i + Σ_{j ∈ N(i)} (a_ij · E_ij / z_i) · (f_j V)
//! f_i  ← f_i − mean_k f_k
//! ```
//!
//! where `E_ij` is the time-decayed edge weight stored in the graph. Dividing
//! by `z_i` removes the lag-only part of the gate's total mass, so a run of
//! identical frames receives identical messages regardless of how close it
//! sits to either end of the video.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FUSED_DIM;
use crate::graph::DynamicGraph;
use crate::random::{gaussian_matrix, seeded};
use crate::rows::{dot, norm, FeatureRows};

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error("dimension mismatch: expected {expected}, found {found} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("node {0} has no neighbors")]
    NoNeighbors(usize),
    #[error("invalid attention config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub seed: u64,
    /// Projected (query/key) dimension.
    pub k: usize,
    /// Feature dimension.
    pub d: usize,
    pub iterations: usize,
    /// Dimension in the `√d_a` logit scale.
    pub scale_dim: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k: 64,
            d: FUSED_DIM,
            iterations: 1,
            scale_dim: 64,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<(), AttentionError> {
        if self.k == 0 || self.k > self.d {
            return Err(AttentionError::InvalidConfig(format!(
                "projected dimension k={} must satisfy 1 ≤ k ≤ d={}",
                self.k, self.d
            )));
        }
        if self.iterations == 0 {
            return Err(AttentionError::InvalidConfig(
                "iterations must be at least 1".into(),
            ));
        }
        if self.scale_dim == 0 {
            return Err(AttentionError::InvalidConfig(
                "scale dimension must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Fixed query (`d×k`), key (`d×k`) and value (`d×d`) matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub query: DMatrix<f64>,
    pub key: DMatrix<f64>,
    pub value: DMatrix<f64>,
}

impl Projections {
    /// Uses caller-supplied matrices. Shapes must be `d×k`, `d×k`, `d×d`.
    pub fn from_matrices(
        query: DMatrix<f64>,
        key: DMatrix<f64>,
        value: DMatrix<f64>,
    ) -> Result<Self, AttentionError> {
        let d = query.nrows();
        if key.shape() != query.shape() {
            return Err(AttentionError::DimensionMismatch {
                what: "key shape",
                expected: query.ncols(),
                found: key.ncols(),
            });
        }
        if value.shape() != (d, d) {
            return Err(AttentionError::DimensionMismatch {
                what: "value shape",
                expected: d,
                found: value.ncols(),
            });
        }
        Ok(Self { query, key, value })
    }

    pub fn dim(&self) -> usize {
        self.query.nrows()
    }

    pub fn projected_dim(&self) -> usize {
        self.query.ncols()
    }
}

/// Thin Q factor of a Householder QR.
fn orthonormal_factor(sample: DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = sample.shape();
    let q = faer::Mat::from_fn(rows, cols, |i, j| sample[(i, j)])
        .qr()
        .compute_thin_Q();
    DMatrix::from_fn(rows, cols, |i, j| q[(i, j)])
}

/// Draws Q, K and V (in that order) from one seeded stream.
pub fn make_projections(cfg: &AttentionConfig) -> Result<Projections, AttentionError> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let query = orthonormal_factor(gaussian_matrix(cfg.d, cfg.k, &mut rng));
    let key = orthonormal_factor(gaussian_matrix(cfg.d, cfg.k, &mut rng));
    let value = orthonormal_factor(gaussian_matrix(cfg.d, cfg.d, &mut rng));
    Ok(Projections { query, key, value })
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn project_row(row: &[f64], matrix: &DMatrix<f64>) -> Vec<f64> {
    (0..matrix.ncols())
        .map(|c| dot(row, matrix.column(c).as_slice()))
        .collect()
}

/// Attention distribution of node `i` over its graph neighbors.
pub fn attention_weights(
    i: usize,
    graph: &DynamicGraph,
    features: &FeatureRows,
    projections: &Projections,
    cfg: &AttentionConfig,
) -> Result<Vec<(usize, f64)>, AttentionError> {
    check_shapes(features, graph, projections)?;
    let neighbors = graph.neighbors(i);
    if neighbors.is_empty() {
        return Err(AttentionError::NoNeighbors(i));
    }
    let query = project_row(features.row(i), &projections.query);
    let scale = (cfg.scale_dim as f64).sqrt();
    let logits: Vec<f64> = neighbors
        .iter()
        .map(|&j| dot(&query, &project_row(features.row(j), &projections.key)) / scale)
        .collect();
    Ok(neighbors.iter().copied().zip(softmax(&logits)).collect())
}

fn check_shapes(
    features: &FeatureRows,
    graph: &DynamicGraph,
    projections: &Projections,
) -> Result<(), AttentionError> {
    if features.len() != graph.len() {
        return Err(AttentionError::DimensionMismatch {
            what: "frame count vs graph nodes",
            expected: graph.len(),
            found: features.len(),
        });
    }
    if features.dim() != projections.dim() {
        return Err(AttentionError::DimensionMismatch {
            what: "feature dimension vs projections",
            expected: projections.dim(),
            found: features.dim(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedFeatures {
    pub vectors: FeatureRows,
    pub iterations_applied: usize,
    pub seed: u64,
}

impl PropagatedFeatures {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Runs `cfg.iterations` rounds with projections drawn from `cfg.seed`.
pub fn propagate(
    features: &FeatureRows,
    graph: &DynamicGraph,
    cfg: &AttentionConfig,
) -> Result<PropagatedFeatures, AttentionError> {
    if features.dim() != cfg.d {
        return Err(AttentionError::DimensionMismatch {
            what: "feature dimension vs config",
            expected: cfg.d,
            found: features.dim(),
        });
    }
    let projections = make_projections(cfg)?;
    propagate_with(features, graph, &projections, cfg)
}

/// Like [`propagate`] but with precomputed projections (which must match `cfg.d`).
pub fn propagate_with(
    features: &FeatureRows,
    graph: &DynamicGraph,
    projections: &Projections,
    cfg: &AttentionConfig,
) -> Result<PropagatedFeatures, AttentionError> {
    cfg.validate()?;
    check_shapes(features, graph, projections)?;
    let scale = (cfg.scale_dim as f64).sqrt();
    let mut current = features.clone();
    for _ in 0..cfg.iterations {
        let queries = current.matmul(&projections.query);
        let keys = current.matmul(&projections.key);
        let values = current.matmul(&projections.value);
        let mut next = current.clone();
        for i in 0..current.len() {
            let neighbors = graph.neighbors(i);
            if neighbors.is_empty() {
                continue;
            }
            let q = queries.row(i);
            let logits: Vec<f64> = neighbors
                .iter()
                .map(|&j| dot(q, keys.row(j)) / scale)
                .collect();
            let attn = softmax(&logits);
            let mass: f64 = neighbors
                .iter()
                .zip(&attn)
                .map(|(&j, a)| a * graph.decay(i, j))
                .sum();
            let out = next.row_mut(i);
            for ((&j, a), e) in neighbors.iter().zip(attn).zip(graph.weights(i)) {
                let gate = a * e / mass;
                for (o, v) in out.iter_mut().zip(values.row(j)) {
                    *o += gate * v;
                }
            }
        }
        next.center();
        current = next;
    }
    Ok(PropagatedFeatures {
        vectors: current,
        iterations_applied: cfg.iterations,
        seed: cfg.seed,
    })
}

/// Dense pairwise cosine similarity between frames.
pub fn cosine_matrix(features: &FeatureRows) -> Vec<Vec<f64>> {
    let norms: Vec<f64> = features.rows().map(norm).collect();
    (0..features.len())
        .map(|i| {
            (0..features.len())
                .map(|j| dot(features.row(i), features.row(j)) / (norms[i] * norms[j]).max(1e-12))
                .collect()
        })
        .collect()
}

/// Pre/post-propagation similarity matrices for heat-map plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityDump {
    pub before: Vec<Vec<f64>>,
    pub after: Vec<Vec<f64>>,
}
