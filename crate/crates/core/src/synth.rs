//! Synthetic feature streams with planted event boundaries.
//!
//! Each regime holds a clip anchor (unit 512-d) and a flow anchor (128-d).
//! Frames draw `normalize(clip_anchor + σ·z)` and `flow_anchor + σ·z`. With
//! probability `jitter` a frame's clip anchor is swapped for a fresh random
//! direction, imitating a one-frame occlusion.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, FlowProjector, FrameFeatures, CLIP_DIM, FLOW_DIM};
use crate::random::{gaussian_vec, seeded, SeededRng};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("cannot write truth file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot encode truth file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub length: usize,
    pub clip_anchor: Vec<f64>,
    pub flow_anchor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub total_frames: usize,
    pub regimes: Vec<Regime>,
    pub noise_sigma: f64,
    pub jitter: f64,
    pub fps: f32,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.regimes.is_empty() {
            return bad("at least one regime is required".into());
        }
        let sum: usize = self.regimes.iter().map(|r| r.length).sum();
        if sum != self.total_frames {
            return bad(format!(
                "regime lengths sum to {sum}, expected {}",
                self.total_frames
            ));
        }
        if self.regimes.iter().any(|r| r.length == 0) {
            return bad("regime lengths must be positive".into());
        }
        for (i, r) in self.regimes.iter().enumerate() {
            if r.clip_anchor.len() != CLIP_DIM || r.flow_anchor.len() != FLOW_DIM {
                return bad(format!(
                    "regime {i} anchors must be {CLIP_DIM}-d and {FLOW_DIM}-d"
                ));
            }
            let n = r.clip_anchor.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return bad(format!("regime {i} clip anchor is not unit length ({n})"));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!(
                "noise sigma must be non-negative, got {}",
                self.noise_sigma
            ));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return bad(format!("jitter must lie in [0, 1), got {}", self.jitter));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        Ok(())
    }

    /// Frames at which a regime other than the first begins.
    pub fn truth_boundaries(&self) -> Vec<usize> {
        self.regimes
            .iter()
            .scan(0, |start, r| {
                let s = *start;
                *start += r.length;
                Some(s)
            })
            .skip(1)
            .collect()
    }
}

/// Settings for [`random_spec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    pub total_frames: usize,
    pub regimes: usize,
    pub noise_sigma: f64,
    pub jitter: f64,
    /// Magnitude of each regime's mean flow, in pixels per frame.
    pub flow_scale: f64,
    pub flow_seed: u64,
    pub fps: f32,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 0,
            total_frames: 2000,
            regimes: 4,
            noise_sigma: 0.1,
            jitter: 0.02,
            flow_scale: 1.0,
            flow_seed: 0,
            fps: 30.0,
        }
    }
}

fn random_unit(rng: &mut SeededRng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(dim, rng);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Equal-length regimes with random clip anchors and flow anchors whose mean
/// flow directions are evenly spread around the circle.
pub fn random_spec(p: &SynthParams) -> Result<SynthSpec, SynthError> {
    if p.regimes == 0 || p.regimes > p.total_frames {
        return Err(SynthError::InvalidSpec(format!(
            "cannot split {} frames into {} regimes",
            p.total_frames, p.regimes
        )));
    }
    let mut rng = seeded(p.seed);
    let projector = FlowProjector::from_seed(p.flow_seed);
    let base = p.total_frames / p.regimes;
    let offset = rng.random::<f64>() * std::f64::consts::TAU;
    let regimes = (0..p.regimes)
        .map(|r| {
            let length = if r + 1 == p.regimes {
                p.total_frames - base * (p.regimes - 1)
            } else {
                base
            };
            let clip_anchor = random_unit(&mut rng, CLIP_DIM);
            let theta = offset + std::f64::consts::TAU * r as f64 / p.regimes as f64;
            let mean_flow = [p.flow_scale * theta.cos(), p.flow_scale * theta.sin()];
            Regime {
                length,
                clip_anchor,
                flow_anchor: projector.project(mean_flow).to_vec(),
            }
        })
        .collect();
    Ok(SynthSpec {
        seed: p.seed,
        total_frames: p.total_frames,
        regimes,
        noise_sigma: p.noise_sigma,
        jitter: p.jitter,
        fps: p.fps,
    })
}

/// Draws the frames of `spec` and returns them with the planted boundaries.
pub fn generate(
    video_id: &str,
    spec: &SynthSpec,
) -> Result<(FrameFeatures, Vec<usize>), SynthError> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    // Separate stream from the one `random_spec` uses for anchors.
    rng.set_stream(1);
    let sigma = spec.noise_sigma;
    let mut clip = Vec::with_capacity(spec.total_frames * CLIP_DIM);
    let mut flow = Vec::with_capacity(spec.total_frames * FLOW_DIM);
    for regime in &spec.regimes {
        for _ in 0..regime.length {
            let occluded;
            let anchor = if spec.jitter > 0.0 && rng.random::<f64>() < spec.jitter {
                occluded = random_unit(&mut rng, CLIP_DIM);
                &occluded
            } else {
                &regime.clip_anchor
            };
            let noisy: Vec<f64> = anchor
                .iter()
                .map(|a| a + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let n = noisy.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            clip.extend(noisy.iter().map(|x| (x / n) as f32));
            flow.extend(
                regime
                    .flow_anchor
                    .iter()
                    .map(|a| (a + sigma * rng.sample::<f64, _>(StandardNormal)) as f32),
            );
        }
    }
    flow[..FLOW_DIM].iter_mut().for_each(|v| *v = 0.0);
    let frames = FrameFeatures::new(video_id, spec.fps, clip, flow)?;
    Ok((frames, spec.truth_boundaries()))
}

/// Planted boundaries as written next to a synthetic container.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub boundaries: Vec<usize>,
}

impl SynthTruth {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
