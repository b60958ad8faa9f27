//! Dense reference solver for the SVM dual.

use fracture_core::learning::Kernel;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense Q = yy' * K.
pub fn q_matrix(gram: &[f64], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    (0..n * n).map(|k| y[k / n] * y[k % n] * gram[k]).collect()
}

pub fn objective(q: &[f64], alpha: &[f64]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * q[i * n + j];
        }
    }
    0.5 * quad - alpha.iter().sum::<f64>()
}

/// Euclidean projection onto {0 <= a <= c, y'a = 0} by bisection on the
/// multiplier of the equality constraint.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lam: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - lam * yi).clamp(0.0, c)).collect() };
    let g = |lam: f64| -> f64 { at(lam).iter().zip(y).map(|(a, yi)| a * yi).sum() };
    let span = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    // g is non-increasing in lam
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Accelerated projected gradient on the dual; the brute-force reference.
pub fn qp_oracle(q: &[f64], y: &[f64], c: f64) -> f64 {
    let n = y.len();
    let mut v = vec![1.0; n];
    let mut lmax = 0.0;
    for _ in 0..500 {
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| q[i * n + j] * v[j]).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lmax = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    let step = 1.0 / (lmax * 1.01 + 1e-12);
    let mut x = project(&vec![0.0; n], y, c);
    let mut z = x.clone();
    let mut t = 1.0f64;
    for _ in 0..20_000 {
        let grad: Vec<f64> = (0..n).map(|i| (0..n).map(|j| q[i * n + j] * z[j]).sum::<f64>() - 1.0).collect();
        let cand: Vec<f64> = z.iter().zip(&grad).map(|(zi, gi)| zi - step * gi).collect();
        let next = project(&cand, y, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = next.iter().zip(&x).map(|(a, b)| a + (t - 1.0) / t_next * (a - b)).collect();
        x = next;
        t = t_next;
    }
    objective(q, &x)
}

pub fn random_problem(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>, Kernel, f64) {
    let n = rng.random_range(4..=20);
    let d = rng.random_range(1..=4);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    y[0] = 1.0;
    y[1] = -1.0;
    let kernel = if rng.random_bool(0.5) {
        Kernel::Linear
    } else {
        Kernel::Rbf {
            gamma: rng.random_range(0.2..2.0),
        }
    };
    let c = [0.5, 1.0, 10.0][rng.random_range(0..3)];
    (x, y, kernel, c)
}
