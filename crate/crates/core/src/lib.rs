//! Training-free video anomaly detection.
//!
//! Per-frame semantic and motion features are fused, linked into a
//! time-decayed frame graph, refined by fixed-projection graph attention and
//! cut into events where the feature trajectory jumps. Each event is then
//! described and scored by an external scorer, and the event scores become
//! frame-level anomaly scores.
//!
//! ```no_run
//! use eventvad::features::read_features;
//! use eventvad::pipeline::{segment, SegmentConfig};
//!
//! let frames = read_features("clip.evf").unwrap();
//! let seg = segment(&frames, &SegmentConfig::default()).unwrap();
//! println!("{:?}", seg.signal.boundaries);
//! ```

pub mod attention;
pub mod boundary;
pub mod evaluation;
pub mod features;
pub mod graph;
pub mod pipeline;
pub mod random;
pub mod rows;
pub mod scoring;
pub mod synth;

pub use attention::{AttentionConfig, Projections, PropagatedFeatures};
pub use boundary::{BoundaryConfig, BoundarySignal};
pub use evaluation::{GroundTruth, MetricReport};
pub use features::{FeatureError, FlowProjector, FrameFeatures, FusedFeatures};
pub use graph::{DynamicGraph, GraphConfig};
pub use pipeline::{SegmentConfig, Segmenter};
pub use rows::FeatureRows;
pub use scoring::{DetectionResult, EventScore, EventScorer, EventUnit};
