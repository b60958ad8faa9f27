//! Greedy forward wrapper selection scored by inner cross-validation.

use rayon::prelude::*;

use super::cv::stratified_folds;
use super::svm::{fit_svm, predict_sign, SvmParams};
use crate::error::{Error, Result};

/// Minimum accuracy gain for a feature to be added.
pub const MIN_GAIN: f64 = 1e-4;

/// Inner k-fold accuracy of an SVM restricted to `features`. Folds whose
/// training part holds one class predict that class.
pub fn inner_cv_accuracy(x: &[Vec<f64>], y: &[f64], folds: &[usize], k: usize, features: &[usize], p: &SvmParams) -> f64 {
    let mut correct = 0usize;
    for f in 0..k {
        let (mut tx, mut ty, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..y.len() {
            if folds[i] == f {
                test.push(i);
            } else {
                tx.push(x[i].clone());
                ty.push(y[i]);
            }
        }
        if test.is_empty() {
            continue;
        }
        let pos = ty.iter().filter(|&&v| v > 0.0).count();
        let model = if pos == 0 || pos == ty.len() {
            None
        } else {
            fit_svm(&tx, &ty, features, p).ok()
        };
        let fallback = if 2 * pos > ty.len() { 1.0 } else { -1.0 };
        for &i in &test {
            let pred = match &model {
                Some(m) => predict_sign(m.decision(&x[i]).expect("row width checked")),
                None => fallback,
            };
            if pred == y[i] {
                correct += 1;
            }
        }
    }
    correct as f64 / y.len() as f64
}

/// Forward selection over `candidates`: start empty, add the candidate with
/// the best inner-CV accuracy while it beats the current score by more than
/// [`MIN_GAIN`]. The empty set scores the majority-class rate. Ties go to
/// the lower column index.
pub fn greedy_forward_select(
    x: &[Vec<f64>],
    y: &[f64],
    candidates: &[usize],
    inner_folds: usize,
    max_features: usize,
    p: &SvmParams,
    seed: u64,
) -> Result<Vec<usize>> {
    if candidates.len() < 2 {
        return Err(Error::Spec("feature selection needs at least 2 candidates".into()));
    }
    let pos = y.iter().filter(|&&v| v > 0.0).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::Training("feature selection needs both classes".into()));
    }
    let folds = stratified_folds(y, inner_folds.min(y.len()), seed)?;
    let k = inner_folds.min(y.len());

    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let mut chosen: Vec<usize> = Vec::new();
    let mut score = pos.max(y.len() - pos) as f64 / y.len() as f64;
    while chosen.len() < max_features {
        let remaining: Vec<usize> = sorted.iter().copied().filter(|c| !chosen.contains(c)).collect();
        if remaining.is_empty() {
            break;
        }
        let scores: Vec<f64> = remaining
            .par_iter()
            .map(|&c| {
                let mut trial = chosen.clone();
                trial.push(c);
                inner_cv_accuracy(x, y, &folds, k, &trial, p)
            })
            .collect();
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        if scores[best] > score + MIN_GAIN {
            chosen.push(remaining[best]);
            score = scores[best];
        } else {
            break;
        }
    }
    Ok(chosen)
}
