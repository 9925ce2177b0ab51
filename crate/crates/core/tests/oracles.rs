use eventvad::attention::{make_projections, AttentionConfig};
use eventvad::features::{project_flow, FlowProjector, FLOW_DIM};
use eventvad::random::{gaussian_matrix, seeded};

#[test]
fn flow_projection_matches_hand_matvec() {
    let sample = gaussian_matrix(2, FLOW_DIM, &mut seeded(42));
    let projected = project_flow([2.0, -1.0], &FlowProjector::from_seed(42));
    for c in 0..FLOW_DIM {
        let (a, b) = (sample[(0, c)], sample[(1, c)]);
        let n = (a * a + b * b).sqrt();
        let want = 2.0 * a / n - b / n;
        assert!((projected[c] - want).abs() < 1e-12, "component {c}");
    }
}

#[test]
fn query_matches_gram_schmidt_up_to_sign() {
    let cfg = AttentionConfig {
        seed: 7,
        k: 2,
        d: 4,
        iterations: 1,
        scale_dim: 2,
    };
    let q = make_projections(&cfg).unwrap().query;
    let sample = gaussian_matrix(4, 2, &mut seeded(7));
    let col = |c: usize| -> Vec<f64> { (0..4).map(|r| sample[(r, c)]).collect() };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let unit = |v: Vec<f64>| {
        let n = dot(&v, &v).sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let e0 = unit(col(0));
    let a1 = col(1);
    let proj = dot(&a1, &e0);
    let e1 = unit(a1.iter().zip(&e0).map(|(a, e)| a - proj * e).collect());
    for (c, e) in [e0, e1].iter().enumerate() {
        let got: Vec<f64> = (0..4).map(|r| q[(r, c)]).collect();
        let sign = dot(&got, e).signum();
        for r in 0..4 {
            assert!((got[r] - sign * e[r]).abs() < 1e-12, "column {c} row {r}");
        }
    }
}
