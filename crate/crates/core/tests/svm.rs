mod common;

use fracture_core::learning::svm::{gram_matrix, kkt_violation, predict_sign, solve_dual};
use fracture_core::learning::{fit_svm, train_svm, Kernel, SvmParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::qp::{objective, q_matrix, qp_oracle, random_problem};

#[test]
fn smo_matches_dense_qp_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let (x, y, kernel, c) = random_problem(&mut rng);
        let gram = gram_matrix(&x, &kernel);
        let bounds = vec![c; y.len()];
        let sol = solve_dual(&gram, &y, &bounds, 1e-3, 1_000_000, case);
        assert!(sol.converged, "case {case}");
        let q = q_matrix(&gram, &y);
        let ours = objective(&q, &sol.alpha);
        assert!((ours - sol.objective).abs() < 1e-9 * ours.abs().max(1.0));
        let reference = qp_oracle(&q, &y, c);
        let rel = (ours - reference).abs() / reference.abs();
        assert!(rel <= 1e-3, "case {case}: smo {ours} vs oracle {reference} ({rel:e})");
        assert!(kkt_violation(&gram, &y, &sol.alpha, sol.bias, &bounds) <= 1e-3);
    }
}

#[test]
fn trained_models_satisfy_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..30 {
        let (x, y, kernel, c) = random_problem(&mut rng);
        let p = SvmParams {
            kernel,
            c,
            seed: case,
            ..SvmParams::default()
        };
        let features: Vec<usize> = (0..x[0].len()).collect();
        let m = fit_svm(&x, &y, &features, &p).unwrap();
        assert!(m.kkt_violation(&x, &y, &p) <= p.tol, "case {case}");
        // free support vectors sit on the margin
        for (&i, &coef) in m.support_indices.iter().zip(&m.coef) {
            let a = coef * y[i];
            if a > 1e-9 && a < c - 1e-9 {
                let f = m.decision(&x[i]).unwrap();
                assert!((y[i] * f - 1.0).abs() <= p.tol, "case {case}: margin {}", y[i] * f);
            }
        }
    }
}

#[test]
fn xor_is_fit_exactly_with_rbf() {
    let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    let y = vec![-1.0, -1.0, 1.0, 1.0];
    let p = SvmParams {
        kernel: Kernel::Rbf { gamma: 1.0 },
        c: 10.0,
        ..SvmParams::default()
    };
    let m = train_svm(&x, &y, &p).unwrap();
    for (xi, yi) in x.iter().zip(&y) {
        assert_eq!(predict_sign(m.decision(xi).unwrap()), *yi);
    }
}

#[test]
fn two_points_split_at_the_midpoint() {
    let x = vec![vec![0.0], vec![1.0]];
    let y = vec![-1.0, 1.0];
    let p = SvmParams {
        kernel: Kernel::Linear,
        c: 10.0,
        ..SvmParams::default()
    };
    let m = train_svm(&x, &y, &p).unwrap();
    assert!(m.decision(&[0.45]).unwrap() < 0.0);
    assert!(m.decision(&[0.55]).unwrap() > 0.0);
    assert!(m.decision(&[0.5]).unwrap().abs() <= 0.1);
    assert_eq!(m.decision(&[1.0]).unwrap(), m.decision(&[1.0]).unwrap());
}

fn separable(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let label = if i % 2 == 0 { 1.0 } else { -1.0 };
        x.push(vec![label * 2.0 + rng.random_range(-0.8..0.8), rng.random_range(-3.0..3.0), rng.random_range(0.0..50.0)]);
        y.push(label);
    }
    (x, y)
}

#[test]
fn duplicated_rows_keep_training_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (x, y) = separable(&mut rng, 24);
    let p = SvmParams {
        c: 100.0,
        ..SvmParams::default()
    };
    let f = [0, 1, 2];
    let m = fit_svm(&x, &y, &f, &p).unwrap();
    let (mut x2, mut y2) = (x.clone(), y.clone());
    x2.extend(x[..8].iter().cloned());
    y2.extend(y[..8].iter().cloned());
    let m2 = fit_svm(&x2, &y2, &f, &p).unwrap();
    for (xi, yi) in x.iter().zip(&y) {
        assert_eq!(predict_sign(m.decision(xi).unwrap()), *yi);
        assert_eq!(predict_sign(m2.decision(xi).unwrap()), *yi);
    }
}

#[test]
fn rescaling_a_column_keeps_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..10 {
        let (x, y, _, c) = random_problem(&mut rng);
        let p = SvmParams {
            c,
            seed: case,
            ..SvmParams::default()
        };
        let f: Vec<usize> = (0..x[0].len()).collect();
        let scaled: Vec<Vec<f64>> = x
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r[0] *= 1000.0;
                r
            })
            .collect();
        let a = fit_svm(&x, &y, &f, &p).unwrap();
        let b = fit_svm(&scaled, &y, &f, &p).unwrap();
        for (r, s) in x.iter().zip(&scaled) {
            assert_eq!(predict_sign(a.decision(r).unwrap()), predict_sign(b.decision(s).unwrap()), "case {case}");
        }
    }
}
