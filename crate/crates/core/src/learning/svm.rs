//! Soft-margin kernel SVM trained by sequential minimal optimization.
//!
//! The solver minimizes the dual `1/2 a'Qa - sum(a)` subject to
//! `0 <= a_i <= C_i` and `y'a = 0`, with `Q_ij = y_i y_j K(x_i, x_j)`. Working
//! pairs follow second-order (maximal gain) selection; ties between equally
//! good candidates resolve in a seeded permutation order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
    /// RBF with `gamma = 1 / (d * median feature variance)` resolved on the
    /// standardized training data at fit time.
    RbfAuto,
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => (-gamma * sq_dist(a, b)).exp(),
            Kernel::RbfAuto => panic!("RbfAuto must be resolved before evaluation"),
        }
    }

    /// Concrete kernel for `rows` (already standardized).
    pub fn resolve(&self, rows: &[Vec<f64>]) -> Kernel {
        match *self {
            Kernel::RbfAuto => {
                let d = rows.first().map_or(0, Vec::len);
                if d == 0 {
                    return Kernel::Rbf { gamma: 1.0 };
                }
                let mut vars: Vec<f64> = (0..d).map(|j| population_variance(rows.iter().map(|r| r[j]))).collect();
                vars.sort_by(f64::total_cmp);
                let med = if d % 2 == 1 {
                    vars[d / 2]
                } else {
                    0.5 * (vars[d / 2 - 1] + vars[d / 2])
                };
                let med = if med > 0.0 { med } else { 1.0 };
                Kernel::Rbf {
                    gamma: 1.0 / (d as f64 * med),
                }
            }
            k => k,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn population_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (s, n) = values.clone().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return 0.0;
    }
    let m = s / n as f64;
    values.map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub kernel: Kernel,
    pub c: f64,
    pub tol: f64,
    /// Iteration budget, in multiples of the training-set size.
    pub max_passes: usize,
    /// C multipliers for (negative, positive) examples.
    pub class_weights: Option<[f64; 2]>,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            kernel: Kernel::RbfAuto,
            c: 1.0,
            tol: 1e-3,
            max_passes: 1000,
            class_weights: None,
            seed: 0,
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Spec(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Spec(format!("tol must be positive, got {}", self.tol)));
        }
        if let Kernel::Rbf { gamma } = self.kernel {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::Spec(format!("gamma must be positive, got {gamma}")));
            }
        }
        if let Some(w) = self.class_weights {
            if w.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
                return Err(Error::Spec(format!("class weights must be positive, got {w:?}")));
            }
        }
        if self.max_passes == 0 {
            return Err(Error::Spec("max_passes must be >= 1".into()));
        }
        Ok(())
    }

    /// Box bound for an example with label `y`.
    pub fn bound(&self, y: f64) -> f64 {
        let w = match self.class_weights {
            Some([neg, pos]) => {
                if y > 0.0 {
                    pos
                } else {
                    neg
                }
            }
            None => 1.0,
        };
        self.c * w
    }
}

/// Result of the dual solver.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    /// Dual objective `1/2 a'Qa - sum(a)` at the solution.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves the dual for a precomputed row-major `n x n` kernel matrix.
pub fn solve_dual(gram: &[f64], y: &[f64], bounds: &[f64], tol: f64, max_iter: usize, seed: u64) -> DualSolution {
    let n = y.len();
    debug_assert_eq!(gram.len(), n * n);
    let q = |i: usize, j: usize| y[i] * y[j] * gram[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let is_up = |a: f64, yi: f64, c: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let is_low = |a: f64, yi: f64, c: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // i: maximal violating index in I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for &t in &order {
            if is_up(alpha[t], y[t], bounds[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let mut gmin = f64::INFINITY;
        for &t in &order {
            if is_low(alpha[t], y[t], bounds[t]) {
                gmin = gmin.min(-y[t] * grad[t]);
            }
        }
        let Some(i) = i_sel else {
            converged = true;
            break;
        };
        if gmax - gmin <= tol {
            converged = true;
            break;
        }
        // j: second-order gain among I_low
        let mut best = f64::INFINITY;
        let mut j_sel = None;
        for &t in &order {
            if !is_low(alpha[t], y[t], bounds[t]) {
                continue;
            }
            let b = gmax + y[t] * grad[t];
            if b > 0.0 {
                let a = gram[i * n + i] + gram[t * n + t] - 2.0 * gram[i * n + t];
                let a = if a > 0.0 { a } else { TAU };
                let gain = -(b * b) / a;
                if gain < best {
                    best = gain;
                    j_sel = Some(t);
                }
            }
        }
        let Some(j) = j_sel else {
            converged = true;
            break;
        };
        iterations += 1;

        let (ci, cj) = (bounds[i], bounds[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let quad = {
            let a = gram[i * n + i] + gram[j * n + j] - 2.0 * gram[i * n + j];
            if a > 0.0 {
                a
            } else {
                TAU
            }
        };
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(t, i) * di + q(t, j) * dj;
        }
    }

    let bias = bias_from_gradient(&alpha, &grad, y, bounds);
    let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>();
    DualSolution {
        alpha,
        bias,
        objective,
        iterations,
        converged,
    }
}

/// Bias `b` of `f(x) = sum a_i y_i K(x_i, x) + b`: the mean of `-y_i G_i`
/// over free examples, or the midpoint of the feasible interval when none is
/// free.
fn bias_from_gradient(alpha: &[f64], grad: &[f64], y: &[f64], bounds: &[f64]) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum, mut free) = (0.0, 0usize);
    for t in 0..y.len() {
        let v = -y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < bounds[t] {
            sum += v;
            free += 1;
        } else if (alpha[t] <= 0.0 && y[t] > 0.0) || (alpha[t] >= bounds[t] && y[t] < 0.0) {
            // in I_up only: b >= v
            lb = lb.max(v);
        } else {
            ub = ub.min(v);
        }
    }
    if free > 0 {
        sum / free as f64
    } else if lb.is_finite() && ub.is_finite() {
        0.5 * (lb + ub)
    } else if lb.is_finite() {
        lb
    } else if ub.is_finite() {
        ub
    } else {
        0.0
    }
}

/// Row-major kernel matrix of `rows`.
pub fn gram_matrix(rows: &[Vec<f64>], kernel: &Kernel) -> Vec<f64> {
    let n = rows.len();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(&rows[i], &rows[j]);
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    g
}

/// Largest violation of the KKT conditions of `f` on the training set:
/// `y f >= 1` at `a = 0`, `y f <= 1` at `a = C`, `y f = 1` in between.
pub fn kkt_violation(gram: &[f64], y: &[f64], alpha: &[f64], bias: f64, bounds: &[f64]) -> f64 {
    let n = y.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let f: f64 = (0..n).map(|j| alpha[j] * y[j] * gram[i * n + j]).sum::<f64>() + bias;
        let m = y[i] * f - 1.0;
        let v = if alpha[i] <= 0.0 {
            (-m).max(0.0)
        } else if alpha[i] >= bounds[i] {
            m.max(0.0)
        } else {
            m.abs()
        };
        worst = worst.max(v);
    }
    let eq: f64 = alpha.iter().zip(y).map(|(a, y)| a * y).sum();
    worst.max(eq.abs())
}

/// Per-feature z-scoring with population statistics; a zero standard
/// deviation is stored as 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardization {
    pub fn identity(d: usize) -> Self {
        Standardization {
            mean: vec![0.0; d],
            sd: vec![1.0; d],
        }
    }

    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut sd = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in sd.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut sd {
            *s = (*s / n).sqrt();
            if !(*s > 0.0) {
                *s = 1.0;
            }
        }
        Standardization { mean, sd }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// Width of the raw rows the model accepts.
    pub n_inputs: usize,
    /// Columns of the raw row used by the model, in order.
    pub features: Vec<usize>,
    pub standardization: Standardization,
    pub kernel: Kernel,
    /// Standardized support vectors.
    pub support_vectors: Vec<Vec<f64>>,
    /// `a_i y_i` per support vector.
    pub coef: Vec<f64>,
    /// Training-set index of each support vector.
    pub support_indices: Vec<usize>,
    pub bias: f64,
}

fn check_training(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Training(format!("need at least 2 examples, got {}", x.len())));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::Training("labels must be +1 or -1".into()));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::Training("training data has a single class".into()));
    }
    let d = x[0].len();
    for r in x {
        if r.len() != d {
            return Err(Error::Dimension {
                expected: d,
                found: r.len(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training("non-finite feature value".into()));
        }
    }
    Ok(d)
}

/// Trains on rows that are already standardized; the model's own
/// standardization is the identity.
pub fn train_svm(x: &[Vec<f64>], y: &[f64], p: &SvmParams) -> Result<SvmModel> {
    p.validate()?;
    let d = check_training(x, y)?;
    let kernel = p.kernel.resolve(x);
    let gram = gram_matrix(x, &kernel);
    let bounds: Vec<f64> = y.iter().map(|&v| p.bound(v)).collect();
    let sol = solve_dual(&gram, y, &bounds, p.tol, p.max_passes.saturating_mul(x.len().max(100)), p.seed);
    let mut m = SvmModel {
        n_inputs: d,
        features: (0..d).collect(),
        standardization: Standardization::identity(d),
        kernel,
        support_vectors: Vec::new(),
        coef: Vec::new(),
        support_indices: Vec::new(),
        bias: sol.bias,
    };
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            m.support_vectors.push(x[i].clone());
            m.coef.push(a * y[i]);
            m.support_indices.push(i);
        }
    }
    Ok(m)
}

/// Standardizes the chosen columns of raw rows with training statistics and
/// trains on them.
pub fn fit_svm(raw: &[Vec<f64>], y: &[f64], features: &[usize], p: &SvmParams) -> Result<SvmModel> {
    let width = check_training(raw, y)?;
    if let Some(&bad) = features.iter().find(|&&f| f >= width) {
        return Err(Error::Dimension {
            expected: width,
            found: bad + 1,
        });
    }
    let picked: Vec<Vec<f64>> = raw.iter().map(|r| features.iter().map(|&f| r[f]).collect()).collect();
    let standardization = Standardization::fit(&picked);
    let z: Vec<Vec<f64>> = picked.iter().map(|r| standardization.apply(r)).collect();
    let mut m = train_svm(&z, y, p)?;
    m.n_inputs = width;
    m.features = features.to_vec();
    m.standardization = standardization;
    Ok(m)
}

impl SvmModel {
    /// A model without features that always returns `value`.
    pub fn constant(n_inputs: usize, value: f64) -> Self {
        SvmModel {
            n_inputs,
            features: Vec::new(),
            standardization: Standardization::identity(0),
            kernel: Kernel::Linear,
            support_vectors: Vec::new(),
            coef: Vec::new(),
            support_indices: Vec::new(),
            bias: value,
        }
    }

    /// Signed decision value for a raw row; positive means neoplastic.
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_inputs {
            return Err(Error::Dimension {
                expected: self.n_inputs,
                found: x.len(),
            });
        }
        let picked: Vec<f64> = self.features.iter().map(|&f| x[f]).collect();
        let z = self.standardization.apply(&picked);
        Ok(self
            .support_vectors
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * self.kernel.eval(sv, &z))
            .sum::<f64>()
            + self.bias)
    }

    /// Largest KKT violation over the training rows the model was fit on.
    pub fn kkt_violation(&self, raw: &[Vec<f64>], y: &[f64], p: &SvmParams) -> f64 {
        let z: Vec<Vec<f64>> = raw
            .iter()
            .map(|r| self.standardization.apply(&self.features.iter().map(|&f| r[f]).collect::<Vec<_>>()))
            .collect();
        let gram = gram_matrix(&z, &self.kernel);
        let mut alpha = vec![0.0; y.len()];
        for (&i, c) in self.support_indices.iter().zip(&self.coef) {
            alpha[i] = c * y[i];
        }
        let bounds: Vec<f64> = y.iter().map(|&v| p.bound(v)).collect();
        kkt_violation(&gram, y, &alpha, self.bias, &bounds)
    }
}

/// Predicted sign; exact zero goes to the negative (majority) class.
pub fn predict_sign(decision: f64) -> f64 {
    if decision > 0.0 {
        1.0
    } else {
        -1.0
    }
}
