//! Event boundary detection over propagated features.
//!
//! ```text
//! s_i = ‖f_{i+1} − f_i‖² + (1 − cos(f_i, f_{i+1}))        transition i → i+1
//! s̃   = quadratic Savitzky-Golay over w+1 taps
//! r_i = s̃_i / max(μ_i, ε)                                 μ = (w+1)-tap moving average of s̃
//! M   = median(r) + mad_k · mad_scale · MAD(r)
//! ```
//!
//! A transition with `r_i > M` proposes a boundary at frame `i + 1`. Nearby
//! proposals are collapsed to their strongest member and events shorter than
//! `min_event_len` are absorbed into their more similar neighbor.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rows::{dot, FeatureRows};

pub const EPS: f64 = 1e-12;

/// Consistency constant that turns a MAD into a Gaussian σ estimate.
pub const GAUSSIAN_MAD_SCALE: f64 = 1.4826;

#[derive(Debug, Error)]
pub enum BoundaryError {
    #[error("cannot detect boundaries in an empty stream")]
    TooShort,
    #[error("invalid boundary config: {0}")]
    InvalidConfig(String),
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConfig {
    /// Window parameter; both filters use `w + 1` symmetric taps.
    pub w: usize,
    pub poly_order: usize,
    pub mad_k: f64,
    /// Multiplier applied to the raw MAD. `1.0` gives the bare `median + k·MAD` rule.
    pub mad_scale: f64,
    /// Smoothed values at or below this fraction of the peak are treated as zero.
    pub ratio_floor: f64,
    pub min_gap: usize,
    pub min_event_len: usize,
    /// Replaces the adaptive threshold when set.
    pub fixed_threshold: Option<f64>,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            w: 60,
            poly_order: 2,
            mad_k: 3.0,
            mad_scale: GAUSSIAN_MAD_SCALE,
            ratio_floor: 1e-3,
            min_gap: 30,
            min_event_len: 16,
            fixed_threshold: None,
        }
    }
}

impl BoundaryConfig {
    pub fn taps(&self) -> usize {
        self.w + 1
    }

    pub fn validate(&self) -> Result<(), BoundaryError> {
        let bad = |msg: String| Err(BoundaryError::InvalidConfig(msg));
        if self.w < 4 || !self.w.is_multiple_of(2) {
            return bad(format!("w must be even and at least 4, got {}", self.w));
        }
        if self.poly_order >= self.taps() {
            return bad(format!(
                "poly_order {} must be below the tap count {}",
                self.poly_order,
                self.taps()
            ));
        }
        if !(self.mad_k.is_finite() && self.mad_k > 0.0) {
            return bad(format!("mad_k must be positive, got {}", self.mad_k));
        }
        if !(self.mad_scale.is_finite() && self.mad_scale > 0.0) {
            return bad(format!(
                "mad_scale must be positive, got {}",
                self.mad_scale
            ));
        }
        if !(0.0..1.0).contains(&self.ratio_floor) {
            return bad(format!(
                "ratio_floor must lie in [0, 1), got {}",
                self.ratio_floor
            ));
        }
        if self.min_event_len == 0 {
            return bad("min_event_len must be at least 1".into());
        }
        if let Some(m) = self.fixed_threshold {
            if !m.is_finite() {
                return bad(format!("fixed threshold must be finite, got {m}"));
            }
        }
        Ok(())
    }
}

/// Squared jump plus cosine dissimilarity. Zero-norm inputs count as fully dissimilar
/// in the cosine term.
pub fn divergence(f_i: &[f64], f_next: &[f64]) -> f64 {
    let jump: f64 = f_i.iter().zip(f_next).map(|(a, b)| (b - a) * (b - a)).sum();
    jump + 1.0 - cosine(f_i, f_next)
}

/// Cosine similarity clamped to `[-1, 1]`; exactly 1 for identical nonzero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let c = dot(a, b) / (dot(a, a) * dot(b, b)).sqrt().max(EPS);
    c.clamp(-1.0, 1.0)
}

/// Index into `0..n` after mirroring about the end samples (edge not repeated).
fn reflect(mut j: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    j = j.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// Applies a symmetric odd-length kernel with reflect padding.
fn filter(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = signal.len();
    let m = (kernel.len() / 2) as isize;
    (0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(t, c)| c * signal[reflect(i as isize + t as isize - m, n)])
                .sum()
        })
        .collect()
}

/// Center-point least-squares weights for a degree-`poly_order` fit over
/// offsets `−w/2 ..= w/2`.
pub fn savgol_coefficients(w: usize, poly_order: usize) -> Vec<f64> {
    let m = (w / 2) as isize;
    let taps = 2 * m as usize + 1;
    assert!(poly_order < taps, "poly_order must be below the tap count");
    let design = DMatrix::from_fn(taps, poly_order + 1, |r, c| {
        ((r as isize - m) as f64).powi(c as i32)
    });
    let normal = design.tr_mul(&design);
    let solved = normal
        .cholesky()
        .expect("normal matrix of a Vandermonde design is positive definite")
        .solve(&design.transpose());
    solved.row(0).iter().copied().collect()
}

pub fn savgol_smooth(raw: &[f64], w: usize, poly_order: usize) -> Vec<f64> {
    filter(raw, &savgol_coefficients(w, poly_order))
}

/// Equal-weight mean over `w + 1` taps.
pub fn moving_average(signal: &[f64], w: usize) -> Vec<f64> {
    let taps = 2 * (w / 2) + 1;
    filter(signal, &vec![1.0 / taps as f64; taps])
}

/// Smoothed signal divided by its local mean. Values at or below
/// `floor · max|s̃|` are zeroed first.
pub fn signal_ratio(smoothed: &[f64], w: usize, floor: f64) -> Vec<f64> {
    let peak = smoothed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = floor * peak;
    let cleaned: Vec<f64> = smoothed
        .iter()
        .map(|&v| if v <= cutoff { 0.0 } else { v })
        .collect();
    let mean = moving_average(&cleaned, w);
    cleaned
        .iter()
        .zip(&mean)
        .map(|(s, mu)| s / mu.max(EPS))
        .collect()
}

/// Median; even lengths average the two central order statistics. Panics on empty input.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sequence");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

pub fn median_absolute_deviation(values: &[f64]) -> f64 {
    let med = median(values);
    let deviations: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    median(&deviations)
}

/// `median + mad_k · mad_scale · MAD`.
pub fn adaptive_threshold(ratio: &[f64], mad_k: f64, mad_scale: f64) -> f64 {
    median(ratio) + mad_k * mad_scale * median_absolute_deviation(ratio)
}

/// Indices whose ratio strictly exceeds `threshold`.
pub fn candidates(ratio: &[f64], threshold: f64) -> Vec<usize> {
    (0..ratio.len()).filter(|&i| ratio[i] > threshold).collect()
}

/// Groups sorted positions whose consecutive gaps are at most `min_gap` and
/// keeps the highest-scoring member of each group (earliest on ties).
pub fn collapse_candidates(positions: &[usize], scores: &[f64], min_gap: usize) -> Vec<usize> {
    assert_eq!(positions.len(), scores.len());
    let mut kept: Vec<usize> = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut last = 0;
    for (&p, &s) in positions.iter().zip(scores) {
        match best {
            Some((_, bs)) if p - last <= min_gap => {
                if s > bs {
                    best = Some((p, s));
                }
            }
            Some((bp, _)) => {
                kept.push(bp);
                best = Some((p, s));
            }
            None => best = Some((p, s)),
        }
        last = p;
    }
    kept.extend(best.map(|(p, _)| p));
    kept
}

/// Removes boundaries until every event spans at least `min_len` frames or a
/// single event remains.
///
/// The shortest offending event goes first. An inner event loses whichever of
/// its two boundaries joins the more similar frames (`similarity(b)` compares
/// frames `b − 1` and `b`); the first and last events lose their only boundary.
pub fn enforce_min_event_len(
    mut boundaries: Vec<usize>,
    total: usize,
    min_len: usize,
    similarity: impl Fn(usize) -> f64,
) -> Vec<usize> {
    loop {
        let mut edges = Vec::with_capacity(boundaries.len() + 2);
        edges.push(0);
        edges.extend_from_slice(&boundaries);
        edges.push(total);
        let lengths: Vec<usize> = edges.windows(2).map(|e| e[1] - e[0]).collect();
        if lengths.len() <= 1 {
            return boundaries;
        }
        let shortest = (0..lengths.len())
            .filter(|&e| lengths[e] < min_len)
            .min_by_key(|&e| lengths[e]);
        let Some(e) = shortest else {
            return boundaries;
        };
        let drop = if e == 0 {
            0
        } else if e == lengths.len() - 1 {
            boundaries.len() - 1
        } else if similarity(boundaries[e - 1]) >= similarity(boundaries[e]) {
            e - 1
        } else {
            e
        };
        boundaries.remove(drop);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySignal {
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub ratio: Vec<f64>,
    pub threshold: f64,
    /// Frames that start a new event.
    pub boundaries: Vec<usize>,
}

pub fn detect_boundaries(
    features: &FeatureRows,
    cfg: &BoundaryConfig,
) -> Result<BoundarySignal, BoundaryError> {
    cfg.validate()?;
    let t = features.len();
    if t == 0 {
        return Err(BoundaryError::TooShort);
    }
    if t == 1 {
        return Ok(BoundarySignal {
            raw: Vec::new(),
            smoothed: Vec::new(),
            ratio: Vec::new(),
            threshold: cfg.fixed_threshold.unwrap_or(0.0),
            boundaries: Vec::new(),
        });
    }
    let raw: Vec<f64> = (0..t - 1)
        .map(|i| divergence(features.row(i), features.row(i + 1)))
        .collect();
    let smoothed = savgol_smooth(&raw, cfg.w, cfg.poly_order);
    let ratio = signal_ratio(&smoothed, cfg.w, cfg.ratio_floor);
    let threshold = cfg
        .fixed_threshold
        .unwrap_or_else(|| adaptive_threshold(&ratio, cfg.mad_k, cfg.mad_scale));

    let transitions = candidates(&ratio, threshold);
    let scores: Vec<f64> = transitions.iter().map(|&i| ratio[i]).collect();
    let frames: Vec<usize> = transitions.iter().map(|&i| i + 1).collect();
    let collapsed = collapse_candidates(&frames, &scores, cfg.min_gap);
    let boundaries = enforce_min_event_len(collapsed, t, cfg.min_event_len, |b| {
        cosine(features.row(b - 1), features.row(b))
    });
    Ok(BoundarySignal {
        raw,
        smoothed,
        ratio,
        threshold,
        boundaries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySummary {
    pub threshold: f64,
    pub boundaries: Vec<usize>,
}

impl BoundarySignal {
    pub fn summary(&self) -> BoundarySummary {
        BoundarySummary {
            threshold: self.threshold,
            boundaries: self.boundaries.clone(),
        }
    }

    /// Curve table with header `index,raw,smoothed,ratio`.
    pub fn write_curve_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["index", "raw", "smoothed", "ratio"])?;
        for i in 0..self.raw.len() {
            writer.write_record([
                i.to_string(),
                self.raw[i].to_string(),
                self.smoothed[i].to_string(),
                self.ratio[i].to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn save_curve_csv(&self, path: impl AsRef<Path>) -> Result<(), BoundaryError> {
        let path = path.as_ref();
        let io_err = |source| BoundaryError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io_err)?;
        self.write_curve_csv(std::io::BufWriter::new(file))
            .map_err(|e| io_err(e.into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_examples() {
        assert_eq!(divergence(&[0.3, -0.4], &[0.3, -0.4]), 0.0);
        assert!((divergence(&[1.0, 0.0], &[0.0, 1.0]) - 3.0).abs() < 1e-15);
        assert!((divergence(&[0.6, 0.8], &[1.2, 1.6]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_vectors_take_full_cosine_term() {
        assert_eq!(divergence(&[0.0, 0.0], &[0.0, 0.0]), 1.0);
    }

    #[test]
    fn five_tap_quadratic_weights() {
        let c = savgol_coefficients(4, 2);
        let want = [-3.0, 12.0, 17.0, 12.0, -3.0];
        for (a, b) in c.iter().zip(want) {
            assert!((a - b / 35.0).abs() < 1e-14, "{a}");
        }
    }

    #[test]
    fn closed_form_weights_for_61_taps() {
        let m = 30.0f64;
        let denom = (2.0 * m - 1.0) * (2.0 * m + 1.0) * (2.0 * m + 3.0);
        let c = savgol_coefficients(60, 2);
        assert_eq!(c.len(), 61);
        for (idx, got) in c.iter().enumerate() {
            let k = idx as f64 - m;
            let want = 3.0 * (3.0 * m * m + 3.0 * m - 1.0 - 5.0 * k * k) / denom;
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn reflect_mirrors_without_repeating_edge() {
        let idx: Vec<usize> = (-3..8).map(|j| reflect(j, 5)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect(-7, 1), 0);
        assert_eq!(reflect(9, 2), 1);
    }

    #[test]
    fn constant_and_quadratic_reproduced() {
        let constant = vec![2.5; 40];
        for v in savgol_smooth(&constant, 10, 2) {
            assert!((v - 2.5).abs() < 1e-12);
        }
        let quad: Vec<f64> = (0..50).map(|i| (i * i) as f64).collect();
        let out = savgol_smooth(&quad, 10, 2);
        for i in 5..45 {
            assert!((out[i] - quad[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn single_sample_smooths_to_itself() {
        assert!((savgol_smooth(&[4.0], 60, 2)[0] - 4.0).abs() < 1e-12);
        assert!((signal_ratio(&[4.0], 60, 1e-3)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_examples() {
        for r in signal_ratio(&[3.0; 9], 4, 1e-3) {
            assert!((r - 1.0).abs() < 1e-12);
        }
        assert_eq!(signal_ratio(&[0.0; 6], 4, 1e-3), vec![0.0; 6]);
        let r = signal_ratio(&[1.0, 1.0, 1.0, 10.0, 1.0, 1.0, 1.0], 2, 1e-3);
        assert!((r[3] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn floor_zeroes_negligible_values() {
        let r = signal_ratio(&[1e-9, 1.0, 1e-9, -0.2], 2, 1e-3);
        assert_eq!(r[0], 0.0);
        assert_eq!(r[2], 0.0);
        assert_eq!(r[3], 0.0);
        assert!(r[1] > 0.0);
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(
            adaptive_threshold(&[1.0, 2.0, 3.0, 4.0, 100.0], 3.0, 1.0),
            6.0
        );
        assert_eq!(adaptive_threshold(&[0.7; 8], 3.0, GAUSSIAN_MAD_SCALE), 0.7);
        assert_eq!(adaptive_threshold(&[5.5], 3.0, GAUSSIAN_MAD_SCALE), 5.5);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn collapse_trace() {
        let kept = collapse_candidates(&[50, 52, 120], &[1.5, 2.0, 1.1], 30);
        assert_eq!(kept, vec![52, 120]);
        let kept = collapse_candidates(&[50, 52, 120], &[2.5, 2.0, 1.1], 30);
        assert_eq!(kept, vec![50, 120]);
        assert!(collapse_candidates(&[], &[], 30).is_empty());
    }

    #[test]
    fn collapse_chains_through_close_members() {
        let kept = collapse_candidates(&[10, 35, 60, 100], &[1.0, 3.0, 2.0, 1.0], 30);
        assert_eq!(kept, vec![35, 100]);
    }

    #[test]
    fn short_inner_event_joins_more_similar_side() {
        // Events [0,40) [40,45) [45,100). Frames across 40 are more alike than across 45.
        let sim = |b: usize| if b == 40 { 0.9 } else { 0.1 };
        assert_eq!(enforce_min_event_len(vec![40, 45], 100, 16, sim), vec![45]);
        let sim = |b: usize| if b == 40 { 0.1 } else { 0.9 };
        assert_eq!(enforce_min_event_len(vec![40, 45], 100, 16, sim), vec![40]);
    }

    #[test]
    fn short_edge_events_drop_their_boundary() {
        let sim = |_: usize| 0.0;
        assert_eq!(enforce_min_event_len(vec![5, 50], 100, 16, sim), vec![50]);
        assert_eq!(enforce_min_event_len(vec![50, 95], 100, 16, sim), vec![50]);
        assert!(enforce_min_event_len(vec![5], 10, 16, sim).is_empty());
    }

    fn two_regime(t: usize, jump: usize) -> FeatureRows {
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|i| {
                if i < jump {
                    vec![1.0, 0.0, 0.0]
                } else {
                    vec![0.0, 1.0, 0.5]
                }
            })
            .collect();
        FeatureRows::from_rows(&rows)
    }

    #[test]
    fn identical_features_have_no_boundaries() {
        let f = FeatureRows::from_rows(&vec![vec![0.1, 0.2]; 300]);
        let sig = detect_boundaries(&f, &BoundaryConfig::default()).unwrap();
        assert!(sig.boundaries.is_empty());
        assert_eq!(sig.raw.len(), 299);
    }

    #[test]
    fn planted_jump_is_found() {
        let cfg = BoundaryConfig {
            w: 4,
            min_gap: 5,
            ..BoundaryConfig::default()
        };
        let sig = detect_boundaries(&two_regime(200, 100), &cfg).unwrap();
        assert_eq!(sig.boundaries.len(), 1);
        assert!(sig.boundaries[0].abs_diff(100) <= 2);
    }

    #[test]
    fn short_streams() {
        let cfg = BoundaryConfig::default();
        assert!(matches!(
            detect_boundaries(&FeatureRows::zeros(0, 3), &cfg),
            Err(BoundaryError::TooShort)
        ));
        let sig = detect_boundaries(&FeatureRows::zeros(1, 3), &cfg).unwrap();
        assert!(sig.boundaries.is_empty());
        assert!(sig.raw.is_empty());
    }

    #[test]
    fn fixed_threshold_overrides() {
        let cfg = BoundaryConfig {
            w: 4,
            min_gap: 5,
            fixed_threshold: Some(1e9),
            ..BoundaryConfig::default()
        };
        let sig = detect_boundaries(&two_regime(200, 100), &cfg).unwrap();
        assert_eq!(sig.threshold, 1e9);
        assert!(sig.boundaries.is_empty());
    }

    #[test]
    fn rejects_bad_windows() {
        for w in [0, 2, 5] {
            let cfg = BoundaryConfig {
                w,
                ..BoundaryConfig::default()
            };
            assert!(cfg.validate().is_err(), "w={w}");
        }
    }

    #[test]
    fn curve_csv_layout() {
        let sig = BoundarySignal {
            raw: vec![0.5, 1.0],
            smoothed: vec![0.25, 1.0],
            ratio: vec![1.0, 2.0],
            threshold: 1.5,
            boundaries: vec![2],
        };
        let mut buf = Vec::new();
        sig.write_curve_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "index,raw,smoothed,ratio\n0,0.5,0.25,1\n1,1,1,2\n"
        );
        assert_eq!(
            serde_json::to_string(&sig.summary()).unwrap(),
            r#"{"threshold":1.5,"boundaries":[2]}"#
        );
    }
}
