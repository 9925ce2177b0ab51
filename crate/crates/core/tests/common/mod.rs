#![allow(dead_code)]

use eventvad::features::{FrameFeatures, CLIP_DIM, FLOW_DIM};
use eventvad::random::seeded;
use rand::Rng;

/// Random valid frames: unit clip vectors, zero flow at frame 0.
pub fn random_frames(seed: u64, t: usize) -> FrameFeatures {
    let mut rng = seeded(seed);
    let mut clip = Vec::with_capacity(t * CLIP_DIM);
    let mut flow = Vec::with_capacity(t * FLOW_DIM);
    for i in 0..t {
        let v: Vec<f64> = (0..CLIP_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        clip.extend(v.iter().map(|x| (x / n) as f32));
        if i == 0 {
            flow.extend(std::iter::repeat_n(0.0f32, FLOW_DIM));
        } else {
            flow.extend((0..FLOW_DIM).map(|_| rng.random_range(-0.5f32..0.5)));
        }
    }
    FrameFeatures::new("rand", 25.0, clip, flow).unwrap()
}
