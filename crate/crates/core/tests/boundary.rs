use eventvad::boundary::{
    adaptive_threshold, candidates, detect_boundaries, savgol_smooth, BoundaryConfig,
    GAUSSIAN_MAD_SCALE,
};
use eventvad::random::seeded;
use eventvad::rows::FeatureRows;
use proptest::prelude::*;
use rand::Rng;

/// Piecewise-constant rows with a fresh random level per regime.
fn regimes(seed: u64, lengths: &[usize], dim: usize) -> FeatureRows {
    let mut rng = seeded(seed);
    let mut rows = Vec::new();
    for &len in lengths {
        let level: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        rows.extend(std::iter::repeat_n(level, len));
    }
    FeatureRows::from_rows(&rows)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quadratics_pass_through_unchanged(
        a in -5.0f64..5.0, b in -1.0f64..1.0, c in -0.01f64..0.01, w in prop::sample::select(vec![4usize, 10, 60])
    ) {
        let x: Vec<f64> = (0..200).map(|t| a + b * t as f64 + c * (t * t) as f64).collect();
        let y = savgol_smooth(&x, w, 2);
        // Mirror padding folds the polynomial, so only full windows are exact.
        for t in w / 2..200 - w / 2 {
            prop_assert!((y[t] - x[t]).abs() < 1e-9, "t={} got {} want {}", t, y[t], x[t]);
        }
    }

    #[test]
    fn higher_mad_k_never_adds_candidates(
        ratio in prop::collection::vec(0.0f64..5.0, 1..200), k1 in 0.0f64..6.0, dk in 0.0f64..6.0
    ) {
        let low = candidates(&ratio, adaptive_threshold(&ratio, k1, GAUSSIAN_MAD_SCALE));
        let high = candidates(&ratio, adaptive_threshold(&ratio, k1 + dk, GAUSSIAN_MAD_SCALE));
        prop_assert!(high.len() <= low.len());
    }

    #[test]
    fn boundaries_come_from_above_threshold_transitions(
        seed in any::<u64>(), lengths in prop::collection::vec(20usize..150, 1..6), noise in 0.0f64..0.2
    ) {
        let clean = regimes(seed, &lengths, 8);
        let mut rng = seeded(seed ^ 1);
        let noisy: Vec<f64> = clean.as_slice().iter().map(|v| v + noise * rng.random_range(-1.0..1.0)).collect();
        let x = FeatureRows::new(8, noisy);
        let cfg = BoundaryConfig { w: 10, min_gap: 5, min_event_len: 4, ..BoundaryConfig::default() };
        let signal = detect_boundaries(&x, &cfg).unwrap();
        for &b in &signal.boundaries {
            prop_assert!(signal.ratio[b - 1] > signal.threshold, "boundary {} below threshold", b);
        }
        let mut sorted = signal.boundaries.clone();
        sorted.dedup();
        prop_assert_eq!(&sorted, &signal.boundaries);
        prop_assert!(signal.boundaries.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn prepending_first_frame_shifts_boundaries(
        seed in any::<u64>(), lengths in prop::collection::vec(130usize..260, 2..5), blocks in 1usize..3
    ) {
        let cfg = BoundaryConfig::default();
        let x = regimes(seed, &lengths, 8);
        let p = blocks * cfg.w;
        let mut padded: Vec<Vec<f64>> = vec![x.row(0).to_vec(); p];
        padded.extend(x.rows().map(|r| r.to_vec()));
        let padded = FeatureRows::from_rows(&padded);
        let base = detect_boundaries(&x, &cfg).unwrap().boundaries;
        let shifted = detect_boundaries(&padded, &cfg).unwrap().boundaries;
        prop_assert_eq!(base.len(), lengths.len() - 1);
        let expected: Vec<usize> = base.iter().map(|b| b + p).collect();
        prop_assert_eq!(shifted, expected);
    }
}

#[test]
fn two_regime_change_point() {
    let x = regimes(4, &[100, 100], 16);
    let cfg = BoundaryConfig {
        w: 4,
        min_gap: 5,
        ..BoundaryConfig::default()
    };
    let found = detect_boundaries(&x, &cfg).unwrap().boundaries;
    assert_eq!(found.len(), 1, "{found:?}");
    assert!(found[0].abs_diff(100) <= 2);
}
