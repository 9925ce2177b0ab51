//! Per-frame feature streams: semantic (CLIP) and motion (projected mean flow)
//! vectors, their fusion, and the `.evf` binary container.
//!
//! # Container layout
//!
//! All integers and reals are little-endian; there is no padding.
//!
//! | offset | type      | field                     |
//! |--------|-----------|---------------------------|
//! | 0      | `[u8; 8]` | magic `EVADFEAT`          |
//! | 8      | `u32`     | version (= 1)             |
//! | 12     | `u32`     | frame count `T`           |
//! | 16     | `u32`     | clip dim (= 512)          |
//! | 20     | `u32`     | flow dim (= 128)          |
//! | 24     | `f32`     | fps                       |
//! | 28     | `f32 ×`   | `T · 512` clip, row-major |
//! | ...    | `f32 ×`   | `T · 128` flow, row-major |
//!
//! The video id is the file stem.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::random::{gaussian_matrix, seeded};
use crate::rows::FeatureRows;

pub const CLIP_DIM: usize = 512;
pub const FLOW_DIM: usize = 128;
pub const FUSED_DIM: usize = CLIP_DIM + FLOW_DIM;

pub const MAGIC: &[u8; 8] = b"EVADFEAT";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

/// Allowed deviation of a clip vector's L2 norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-3;
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("vector has (near) zero norm; the extraction is probably corrupt")]
    ZeroVector,
    #[error("bad magic {found:?}, expected \"EVADFEAT\"")]
    BadMagic { found: [u8; 8] },
    #[error("unsupported container version {0} (supported: 1)")]
    UnsupportedVersion(u32),
    #[error("dimension mismatch in {field}: expected {expected}, found {found}")]
    DimensionMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("truncated file while reading {field}: need {needed} bytes, {available} available")]
    TruncatedFile {
        field: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("clip vector of frame {frame} has norm {norm}, expected 1 ± 1e-3")]
    NormViolation { frame: usize, norm: f64 },
    #[error("{stream} vector of frame {frame} contains a non-finite value")]
    NonFinite { stream: &'static str, frame: usize },
    #[error("flow vector of frame 0 must be zero (frame 0 has no predecessor)")]
    NonZeroInitialFlow,
    #[error("fps must be positive and finite, got {0}")]
    InvalidFps(f32),
    #[error("fusion coefficient alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Semantic and motion vectors for every frame of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    video_id: String,
    fps: f32,
    clip: Vec<f32>,
    flow: Vec<f32>,
}

impl FrameFeatures {
    /// Takes flat row-major clip (`T · 512`) and flow (`T · 128`) payloads and
    /// checks every container invariant.
    pub fn new(
        video_id: impl Into<String>,
        fps: f32,
        clip: Vec<f32>,
        flow: Vec<f32>,
    ) -> Result<Self, FeatureError> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(FeatureError::InvalidFps(fps));
        }
        if !clip.len().is_multiple_of(CLIP_DIM) {
            return Err(FeatureError::DimensionMismatch {
                field: "clip payload",
                expected: CLIP_DIM * (clip.len() / CLIP_DIM + 1),
                found: clip.len(),
            });
        }
        if !flow.len().is_multiple_of(FLOW_DIM) {
            return Err(FeatureError::DimensionMismatch {
                field: "flow payload",
                expected: FLOW_DIM * (flow.len() / FLOW_DIM + 1),
                found: flow.len(),
            });
        }
        let frames = clip.len() / CLIP_DIM;
        if frames == 0 {
            return Err(FeatureError::DimensionMismatch {
                field: "frame count",
                expected: 1,
                found: 0,
            });
        }
        if flow.len() / FLOW_DIM != frames {
            return Err(FeatureError::DimensionMismatch {
                field: "flow frame count",
                expected: frames,
                found: flow.len() / FLOW_DIM,
            });
        }
        for (frame, v) in clip.chunks_exact(CLIP_DIM).enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(FeatureError::NonFinite {
                    stream: "clip",
                    frame,
                });
            }
            let norm = norm_f32(v);
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(FeatureError::NormViolation { frame, norm });
            }
        }
        for (frame, v) in flow.chunks_exact(FLOW_DIM).enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(FeatureError::NonFinite {
                    stream: "flow",
                    frame,
                });
            }
        }
        if flow[..FLOW_DIM].iter().any(|&x| x != 0.0) {
            return Err(FeatureError::NonZeroInitialFlow);
        }
        Ok(Self {
            video_id: video_id.into(),
            fps,
            clip,
            flow,
        })
    }

    /// Builds from per-frame vectors; each clip row must have 512 and each flow row 128 entries.
    pub fn from_frames(
        video_id: impl Into<String>,
        fps: f32,
        clip: &[Vec<f32>],
        flow: &[Vec<f32>],
    ) -> Result<Self, FeatureError> {
        for (frame, v) in clip.iter().enumerate() {
            if v.len() != CLIP_DIM {
                return Err(FeatureError::DimensionMismatch {
                    field: if frame == 0 {
                        "clip dim"
                    } else {
                        "clip dim (later frame)"
                    },
                    expected: CLIP_DIM,
                    found: v.len(),
                });
            }
        }
        for v in flow {
            if v.len() != FLOW_DIM {
                return Err(FeatureError::DimensionMismatch {
                    field: "flow dim",
                    expected: FLOW_DIM,
                    found: v.len(),
                });
            }
        }
        Self::new(video_id, fps, clip.concat(), flow.concat())
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn set_video_id(&mut self, video_id: impl Into<String>) {
        self.video_id = video_id.into();
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    /// Frame count `T` (always ≥ 1).
    pub fn len(&self) -> usize {
        self.clip.len() / CLIP_DIM
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn clip(&self, frame: usize) -> &[f32] {
        &self.clip[frame * CLIP_DIM..(frame + 1) * CLIP_DIM]
    }

    pub fn flow(&self, frame: usize) -> &[f32] {
        &self.flow[frame * FLOW_DIM..(frame + 1) * FLOW_DIM]
    }

    pub fn clip_payload(&self) -> &[f32] {
        &self.clip
    }

    pub fn flow_payload(&self) -> &[f32] {
        &self.flow
    }
}

fn norm_f32(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt()
}

/// L2-normalizes a raw 512-d CLIP embedding.
pub fn normalize_clip(raw: &[f32]) -> Result<Vec<f32>, FeatureError> {
    if raw.len() != CLIP_DIM {
        return Err(FeatureError::DimensionMismatch {
            field: "clip dim",
            expected: CLIP_DIM,
            found: raw.len(),
        });
    }
    let norm = norm_f32(raw);
    if norm <= NORM_EPS {
        return Err(FeatureError::ZeroVector);
    }
    Ok(raw
        .iter()
        .map(|&x| (f64::from(x) / norm.max(NORM_EPS)) as f32)
        .collect())
}

/// Fixed 2×128 projection from a mean optical-flow vector to the motion feature.
///
/// Entries are seeded standard-normal draws; every column is rescaled to unit
/// L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowProjector {
    seed: u64,
    rows: [[f64; FLOW_DIM]; 2],
}

impl FlowProjector {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = seeded(seed);
        let sample = gaussian_matrix(2, FLOW_DIM, &mut rng);
        let mut rows = [[0.0; FLOW_DIM]; 2];
        for c in 0..FLOW_DIM {
            let (a, b) = (sample[(0, c)], sample[(1, c)]);
            let n = (a * a + b * b).sqrt();
            rows[0][c] = a / n;
            rows[1][c] = b / n;
        }
        Self { seed, rows }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Row `r` of the 2×128 matrix.
    pub fn row(&self, r: usize) -> &[f64; FLOW_DIM] {
        &self.rows[r]
    }

    /// `Pᵀ · mean_flow`.
    pub fn project(&self, mean_flow: [f64; 2]) -> [f64; FLOW_DIM] {
        let mut out = [0.0; FLOW_DIM];
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.rows[0][c] * mean_flow[0] + self.rows[1][c] * mean_flow[1];
        }
        out
    }
}

/// Projects the spatial mean flow `(mean dx, mean dy)` to a 128-d motion feature.
pub fn project_flow(mean_flow: [f64; 2], projector: &FlowProjector) -> [f64; FLOW_DIM] {
    projector.project(mean_flow)
}

/// Per-frame fused vectors `alpha·clip ⊕ (1−alpha)·flow` (concatenation, 640-d).
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatures {
    pub vectors: FeatureRows,
    pub alpha: f64,
}

impl FusedFeatures {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.dim()
    }
}

pub fn check_alpha(alpha: f64) -> Result<(), FeatureError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(FeatureError::InvalidAlpha(alpha))
    }
}

pub fn fuse(frames: &FrameFeatures, alpha: f64) -> Result<FusedFeatures, FeatureError> {
    check_alpha(alpha)?;
    let beta = 1.0 - alpha;
    let mut data = Vec::with_capacity(frames.len() * FUSED_DIM);
    for t in 0..frames.len() {
        data.extend(frames.clip(t).iter().map(|&x| alpha * f64::from(x)));
        data.extend(frames.flow(t).iter().map(|&x| beta * f64::from(x)));
    }
    Ok(FusedFeatures {
        vectors: FeatureRows::new(FUSED_DIM, data),
        alpha,
    })
}

/// Serializes to the `.evf` byte layout.
pub fn encode_features(frames: &FrameFeatures) -> Vec<u8> {
    let t = frames.len();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t * FUSED_DIM);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(CLIP_DIM as u32).to_le_bytes());
    out.extend_from_slice(&(FLOW_DIM as u32).to_le_bytes());
    out.extend_from_slice(&frames.fps.to_le_bytes());
    for x in frames.clip.iter().chain(&frames.flow) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Parses `.evf` bytes, validating header fields before the payload invariants.
pub fn decode_features(video_id: &str, bytes: &[u8]) -> Result<FrameFeatures, FeatureError> {
    if bytes.len() < HEADER_LEN {
        return Err(FeatureError::TruncatedFile {
            field: "header",
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let mut magic = [0u8; 8];
    magic.copy_from_slice(&bytes[..8]);
    if &magic != MAGIC {
        return Err(FeatureError::BadMagic { found: magic });
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(8);
    if version != FORMAT_VERSION {
        return Err(FeatureError::UnsupportedVersion(version));
    }
    let frames = word(12) as usize;
    let clip_dim = word(16) as usize;
    let flow_dim = word(20) as usize;
    let fps = f32::from_le_bytes(bytes[24..28].try_into().unwrap());
    if clip_dim != CLIP_DIM {
        return Err(FeatureError::DimensionMismatch {
            field: "clip_dim",
            expected: CLIP_DIM,
            found: clip_dim,
        });
    }
    if flow_dim != FLOW_DIM {
        return Err(FeatureError::DimensionMismatch {
            field: "flow_dim",
            expected: FLOW_DIM,
            found: flow_dim,
        });
    }
    if frames == 0 {
        return Err(FeatureError::DimensionMismatch {
            field: "frame count",
            expected: 1,
            found: 0,
        });
    }

    let payload = &bytes[HEADER_LEN..];
    let clip_bytes = 4 * frames * CLIP_DIM;
    let flow_bytes = 4 * frames * FLOW_DIM;
    if payload.len() < clip_bytes {
        return Err(FeatureError::TruncatedFile {
            field: "clip payload",
            needed: clip_bytes,
            available: payload.len(),
        });
    }
    if payload.len() < clip_bytes + flow_bytes {
        return Err(FeatureError::TruncatedFile {
            field: "flow payload",
            needed: flow_bytes,
            available: payload.len() - clip_bytes,
        });
    }
    if payload.len() > clip_bytes + flow_bytes {
        return Err(FeatureError::DimensionMismatch {
            field: "payload length",
            expected: clip_bytes + flow_bytes,
            found: payload.len(),
        });
    }
    let floats = |b: &[u8]| -> Vec<f32> {
        b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let clip = floats(&payload[..clip_bytes]);
    let flow = floats(&payload[clip_bytes..]);
    FrameFeatures::new(video_id, fps, clip, flow)
}

/// Video id of a container path: its file stem.
pub fn video_id_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FrameFeatures, FeatureError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_features(&video_id_from_path(path), &bytes)
}

pub fn write_features(frames: &FrameFeatures, path: impl AsRef<Path>) -> Result<(), FeatureError> {
    fs::write(path, encode_features(frames))?;
    Ok(())
}
