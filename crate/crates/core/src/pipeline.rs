//! Fusion, graph construction, propagation and boundary detection in one call.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{make_projections, propagate_with, AttentionConfig, AttentionError};
use crate::attention::{Projections, PropagatedFeatures};
use crate::boundary::{detect_boundaries, BoundaryConfig, BoundaryError, BoundarySignal};
use crate::features::{fuse, FeatureError, FrameFeatures, FusedFeatures};
use crate::graph::{build_graph, DynamicGraph, GraphConfig, GraphError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub graph: GraphConfig,
    pub attention: AttentionConfig,
    pub boundary: BoundaryConfig,
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.graph.validate()?;
        self.attention.validate()?;
        self.boundary.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub fused: FusedFeatures,
    pub graph: DynamicGraph,
    pub propagated: PropagatedFeatures,
    pub signal: BoundarySignal,
}

/// Holds the projection matrices so several videos can share one draw.
#[derive(Debug, Clone)]
pub struct Segmenter {
    cfg: SegmentConfig,
    projections: Projections,
}

impl Segmenter {
    pub fn new(cfg: SegmentConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let projections = make_projections(&cfg.attention)?;
        Ok(Self { cfg, projections })
    }

    /// Reuses already drawn projections, e.g. across a hyperparameter grid
    /// that keeps the attention seed fixed.
    pub fn with_projections(
        cfg: SegmentConfig,
        projections: Projections,
    ) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let checks = [
            ("projection rows", cfg.attention.d, projections.dim()),
            (
                "projection columns",
                cfg.attention.k,
                projections.projected_dim(),
            ),
        ];
        for (what, expected, found) in checks {
            if expected != found {
                return Err(AttentionError::DimensionMismatch {
                    what,
                    expected,
                    found,
                }
                .into());
            }
        }
        Ok(Self { cfg, projections })
    }

    pub fn config(&self) -> &SegmentConfig {
        &self.cfg
    }

    pub fn projections(&self) -> &Projections {
        &self.projections
    }

    pub fn segment(&self, frames: &FrameFeatures) -> Result<Segmentation, PipelineError> {
        let fused = fuse(frames, self.cfg.graph.alpha)?;
        let graph = build_graph(frames, &self.cfg.graph)?;
        let propagated = propagate_with(
            &fused.vectors,
            &graph,
            &self.projections,
            &self.cfg.attention,
        )?;
        let signal = detect_boundaries(&propagated.vectors, &self.cfg.boundary)?;
        Ok(Segmentation {
            fused,
            graph,
            propagated,
            signal,
        })
    }
}

/// One-shot segmentation of a single video.
pub fn segment(frames: &FrameFeatures, cfg: &SegmentConfig) -> Result<Segmentation, PipelineError> {
    Segmenter::new(*cfg)?.segment(frames)
}
