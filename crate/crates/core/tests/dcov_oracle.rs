use proptest::prelude::*;
use rand::Rng;
use tlforest::dcov::{dcov_fast, dcov_u, dcov_v2, estimate, feature_weights, DCovKind};
use tlforest::rng::chacha;
use tlforest::DCovEstimate;

/// U-centered distance covariance from explicit n×n matrices.
fn u_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let center = |v: &[f64]| {
        let a: Vec<Vec<f64>> = v.iter().map(|p| v.iter().map(|q| (p - q).abs()).collect()).collect();
        let row: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
        let total: f64 = row.iter().sum();
        let nf = n as f64;
        let mut t = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    t[i][j] = a[i][j] - (row[i] + row[j]) / (nf - 2.0) + total / ((nf - 1.0) * (nf - 2.0));
                }
            }
        }
        t
    };
    let a = center(x);
    let b = center(y);
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i][j] * b[i][j];
            }
        }
    }
    s / (n as f64 * (n as f64 - 3.0))
}

/// V-statistic from explicit double-centered matrices.
fn v_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let center = |v: &[f64]| {
        let a: Vec<Vec<f64>> = v.iter().map(|p| v.iter().map(|q| (p - q).abs()).collect()).collect();
        let row: Vec<f64> = a.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
        let grand = row.iter().sum::<f64>() / n as f64;
        (0..n)
            .map(|i| (0..n).map(|j| a[i][j] - row[i] - row[j] + grand).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    let a = center(x);
    let b = center(y);
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += a[i][j] * b[i][j];
        }
    }
    s / (n * n) as f64
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() < 1e-14
}

#[test]
fn hand_values() {
    assert!((dcov_v2(&[0.0, 1.0], &[0.0, 1.0]).unwrap().value - 0.25).abs() < 1e-12);
    let v = dcov_v2(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap().value;
    assert!((v - 40.0 / 81.0).abs() < 1e-12);
    let c = dcov_v2(&[3.0; 5], &[1.0, 5.0, 2.0, 0.0, 9.0]).unwrap().value;
    assert_eq!(c, 0.0);
    assert_eq!(dcov_u(&[2.0; 4], &[1.0, 5.0, 2.0, 9.0]).unwrap().value, 0.0);
}

#[test]
fn small_exact_instances_match_oracle() {
    let x = [1.0, 2.0, 3.0, 4.0];
    let o = u_oracle(&x, &x);
    assert!(close(dcov_u(&x, &x).unwrap().value, o, 1e-12));
    assert!(close(dcov_fast(&x, &x).unwrap().value, o, 1e-12));
    let x = [0.0, 1.0, 2.0, 3.0];
    assert!(close(dcov_fast(&x, &x).unwrap().value, dcov_u(&x, &x).unwrap().value, 1e-12));
}

#[test]
fn fast_matches_oracle_with_ties() {
    let mut r = chacha(17);
    for _ in 0..200 {
        let n = r.random_range(4..80);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(0..5) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(0..3) as f64).collect();
        let o = u_oracle(&x, &y);
        let f = dcov_fast(&x, &y).unwrap().value;
        assert!(close(f, o, 1e-9), "n={n}: fast {f} oracle {o}");
    }
}

#[test]
fn v_matches_oracle() {
    let mut r = chacha(5);
    for _ in 0..100 {
        let n = r.random_range(1..60);
        let x: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v + 0.3 * r.random::<f64>()).collect();
        let o = v_oracle(&x, &y).max(0.0);
        assert!(close(dcov_v2(&x, &y).unwrap().value, o, 1e-10));
    }
}

#[test]
fn u_is_unbiased_under_independence() {
    let mut r = chacha(2024);
    let reps = 200;
    let vals: Vec<f64> = (0..reps)
        .map(|_| {
            let x: Vec<f64> = (0..1000).map(|_| r.random::<f64>()).collect();
            let y: Vec<f64> = (0..1000).map(|_| r.random::<f64>()).collect();
            dcov_fast(&x, &y).unwrap().value
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / reps as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let se = (var / reps as f64).sqrt();
    assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
}

#[test]
fn short_inputs_are_rejected() {
    assert!(dcov_u(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).is_err());
    assert!(dcov_fast(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).is_err());
    assert!(dcov_v2(&[1.0, 2.0], &[1.0]).is_err());
}

fn pair(max_n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (4..max_n).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0f64..100.0, n),
            prop::collection::vec(-100.0f64..100.0, n),
        )
    })
}

const KINDS: [DCovKind; 3] = [DCovKind::V, DCovKind::U, DCovKind::FastU];

proptest! {
    #[test]
    fn v_is_nonnegative((x, y) in pair(60)) {
        prop_assert!(dcov_v2(&x, &y).unwrap().value >= 0.0);
    }

    #[test]
    fn symmetric_exactly((x, y) in pair(60)) {
        for k in KINDS {
            prop_assert_eq!(estimate(k, &x, &y).unwrap().value, estimate(k, &y, &x).unwrap().value);
        }
    }

    #[test]
    fn translation_invariant((x, y) in pair(60), c in -10.0f64..10.0) {
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        for k in KINDS {
            let a = estimate(k, &shifted, &y).unwrap().value;
            let b = estimate(k, &x, &y).unwrap().value;
            let scale = v_oracle(&x, &x).sqrt() * v_oracle(&y, &y).sqrt();
            prop_assert!((a - b).abs() <= 1e-12 * scale.max(1.0), "{:?}: {} vs {}", k, a, b);
        }
    }

    #[test]
    fn v_scale_law((x, y) in pair(60), a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let xs: Vec<f64> = x.iter().map(|v| a * v).collect();
        let ys: Vec<f64> = y.iter().map(|v| b * v).collect();
        let lhs = dcov_v2(&xs, &ys).unwrap().value;
        let rhs = a.abs() * b.abs() * dcov_v2(&x, &y).unwrap().value;
        let scale = (a.abs() * b.abs()).max(1.0) * v_oracle(&x, &x).sqrt() * v_oracle(&y, &y).sqrt();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn fast_equals_u_oracle((x, y) in pair(120)) {
        let o = u_oracle(&x, &y);
        let f = dcov_fast(&x, &y).unwrap().value;
        let scale = v_oracle(&x, &x).sqrt() * v_oracle(&y, &y).sqrt();
        prop_assert!((f - o).abs() <= 1e-9 * o.abs().max(scale * 1e-3));
    }

    #[test]
    fn weights_are_probabilities(vals in prop::collection::vec(-1.0f64..1.0, 1..30)) {
        let est: Vec<DCovEstimate> = vals
            .iter()
            .map(|&value| DCovEstimate { value, kind: DCovKind::FastU, n: 10 })
            .collect();
        let w = feature_weights(&est).unwrap();
        let p = w.as_slice();
        prop_assert_eq!(p.len(), vals.len());
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn fast_estimator_scales_like_n_log_n() {
    let mut r = chacha(31);
    let mut time = |n: usize| {
        let x: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let reps = 4096 * 8 / n;
        (0..7)
            .map(|_| {
                let t = std::time::Instant::now();
                for _ in 0..reps {
                    std::hint::black_box(dcov_fast(&x, &y).unwrap());
                }
                t.elapsed().as_secs_f64() / reps as f64
            })
            .fold(f64::INFINITY, f64::min)
    };
    let small = time(256);
    let large = time(4096);
    // n log n predicts 16 · 12/8 = 24; allow 2× slack
    let bound = 2.0 * (4096.0 * 12.0) / (256.0 * 8.0);
    assert!(large / small <= bound, "ratio {} exceeds {bound}", large / small);
}
