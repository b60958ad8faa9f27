//! Fold assignment and cross-validation over feature-set conditions.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::committee::{train_committee, Committee, CommitteeConfig};
use super::impute::Imputer;
use super::svm::Standardization;
use crate::error::{Error, Result};
use crate::evaluation::ConfusionMatrix2;
use crate::features::{Condition, FeatureTable, InstanceId};
use crate::manifest::Class;

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stratified assignment of `y` (any two-valued labels) to `k` folds: each
/// class is shuffled and dealt round-robin, the dealing position carrying
/// over from one class to the next.
pub fn stratified_folds(y: &[f64], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > y.len() {
        return Err(Error::Folds(format!("k = {k} must be in 1..={}", y.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<f64> = y.to_vec();
    classes.sort_by(f64::total_cmp);
    classes.dedup();
    let mut folds = vec![0; y.len()];
    let mut next = 0;
    for c in classes {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: Vec<usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }
}

/// Assigns instances to `k` folds, stratified by class. With `groups`, all
/// instances of a group share a fold: groups are placed largest first into
/// the fold with the fewest instances of the group's majority class (then
/// fewest overall), which balances only approximately.
pub fn kfold_split(labels: &[Class], k: usize, seed: u64, groups: Option<&[String]>) -> Result<FoldAssignment> {
    let n = labels.len();
    if k == 0 || k > n {
        return Err(Error::Folds(format!("k = {k} exceeds the {n} instances")));
    }
    let Some(groups) = groups else {
        let y: Vec<f64> = labels.iter().map(|c| c.sign()).collect();
        return Ok(FoldAssignment {
            k,
            fold_of: stratified_folds(&y, k, seed)?,
            warnings: Vec::new(),
        });
    };
    if groups.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: groups.len(),
        });
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g.as_str()).or_default().push(i);
    }
    let mut warnings = Vec::new();
    let cap = n.div_ceil(k);
    let mut order: Vec<(&str, Vec<usize>)> = members.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by_key(|(_, m)| std::cmp::Reverse(m.len()));
    if order.len() < k {
        warnings.push(format!("{} groups for {k} folds: some folds stay empty", order.len()));
    }

    let mut size = vec![0usize; k];
    let mut per_class = vec![[0usize; 2]; k];
    let mut fold_of = vec![0; n];
    for (name, m) in &order {
        if m.len() > cap {
            warnings.push(format!("group {name} has {} instances, more than n/k = {cap}", m.len()));
        }
        let neo = m.iter().filter(|&&i| labels[i] == Class::Neoplastic).count();
        let major = usize::from(2 * neo > m.len());
        let f = (0..k)
            .min_by_key(|&f| (per_class[f][major], size[f], f))
            .expect("k >= 1");
        for &i in m {
            fold_of[i] = f;
            size[f] += 1;
            per_class[f][usize::from(labels[i] == Class::Neoplastic)] += 1;
        }
    }
    let (lo, hi) = (size.iter().min().copied().unwrap_or(0), size.iter().max().copied().unwrap_or(0));
    if hi - lo > 1 {
        warnings.push(format!("grouped fold sizes range from {lo} to {hi}"));
    }
    Ok(FoldAssignment { k, fold_of, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Grouping {
    /// Vertebra-level folds.
    #[default]
    None,
    /// All instances of a patient share a fold.
    Patient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    pub fold: usize,
    pub truth: Class,
    pub decision: f64,
    pub predicted: Class,
}

/// What a fold's model learned from its training rows; kept so tests can
/// check that nothing came from the test rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldArtifact {
    pub fold: usize,
    pub train_indices: Vec<usize>,
    pub imputer: Imputer,
    /// (feature subset, standardization) per committee member.
    pub members: Vec<(Vec<usize>, Standardization)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub condition: Condition,
    pub ids: Vec<InstanceId>,
    /// Pooled test predictions, ordered by instance index.
    pub predictions: Vec<Prediction>,
    pub confusion: ConfusionMatrix2,
    pub accuracy: f64,
    pub folds: FoldAssignment,
    pub skipped_folds: Vec<usize>,
    pub warnings: Vec<String>,
    pub artifacts: Vec<FoldArtifact>,
}

fn predict(committee: &Committee, row: &crate::features::FeatureVector) -> Result<(f64, Class)> {
    let d = committee.decision(row)?;
    Ok((d, if d > 0.0 { Class::Neoplastic } else { Class::Osteoporotic }))
}

/// k-fold cross-validation of a committee on one condition. Imputation,
/// standardization, selection and training see only training-fold rows.
pub fn cross_validate(
    table: &FeatureTable,
    condition: Condition,
    cfg: &CommitteeConfig,
    k: usize,
    seed: u64,
    grouping: Grouping,
) -> Result<CvResult> {
    cfg.validate()?;
    let labels = table.truths();
    let groups: Option<Vec<String>> =
        (grouping == Grouping::Patient).then(|| table.rows.iter().map(|r| r.id.patient_id.clone()).collect());
    let folds = kfold_split(&labels, k, seed, groups.as_deref())?;

    type FoldOut = (Option<FoldArtifact>, Vec<Prediction>, Option<String>);
    let outcomes: Vec<FoldOut> = (0..k)
        .into_par_iter()
        .map(|f| -> Result<FoldOut> {
            let train = folds.train_indices(f);
            let test = folds.test_indices(f);
            let neo = train.iter().filter(|&&i| labels[i] == Class::Neoplastic).count();
            if neo == 0 || neo == train.len() {
                return Ok((None, Vec::new(), Some(format!("fold {f}: single-class training set, skipped"))));
            }
            let rows: Vec<_> = train.iter().map(|&i| &table.rows[i]).collect();
            let fold_cfg = CommitteeConfig {
                seed: derive_seed(cfg.seed, f as u64),
                ..cfg.clone()
            };
            let committee = train_committee(&rows, condition, &fold_cfg)?;
            let mut preds = Vec::with_capacity(test.len());
            for &i in &test {
                let (decision, predicted) = predict(&committee, &table.rows[i])?;
                preds.push(Prediction {
                    index: i,
                    fold: f,
                    truth: labels[i],
                    decision,
                    predicted,
                });
            }
            let artifact = FoldArtifact {
                fold: f,
                train_indices: train,
                imputer: committee.imputer.clone(),
                members: committee
                    .members
                    .iter()
                    .map(|m| (m.features.clone(), m.standardization.clone()))
                    .collect(),
            };
            Ok((Some(artifact), preds, None))
        })
        .collect::<Result<_>>()?;

    let mut predictions = Vec::new();
    let mut artifacts = Vec::new();
    let mut skipped_folds = Vec::new();
    let mut warnings = folds.warnings.clone();
    for (f, (artifact, preds, warning)) in outcomes.into_iter().enumerate() {
        match artifact {
            Some(a) => artifacts.push(a),
            None => skipped_folds.push(f),
        }
        predictions.extend(preds);
        warnings.extend(warning);
    }
    predictions.sort_by_key(|p| p.index);
    if predictions.is_empty() {
        return Err(Error::Evaluation("every fold was skipped".into()));
    }
    let truth: Vec<Class> = predictions.iter().map(|p| p.truth).collect();
    let pred: Vec<Class> = predictions.iter().map(|p| p.predicted).collect();
    let confusion = ConfusionMatrix2::from_labels(&truth, &pred)?;
    Ok(CvResult {
        condition,
        ids: table.ids(),
        accuracy: confusion.accuracy()?,
        confusion,
        predictions,
        folds,
        skipped_folds,
        warnings,
        artifacts,
    })
}

/// Label-permutation control on a class-balanced subsample.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlResult {
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Instances per class in each balanced subsample.
    pub per_class: usize,
}

/// Chance-level control: the majority class is subsampled to the minority
/// count so that chance accuracy is exactly 0.5, labels are permuted, and
/// the permuted table is cross-validated. Repeated `permutations` times.
pub fn shuffled_control(
    table: &FeatureTable,
    condition: Condition,
    cfg: &CommitteeConfig,
    k: usize,
    seed: u64,
    permutations: usize,
) -> Result<ControlResult> {
    if permutations == 0 {
        return Err(Error::Spec("permutations must be >= 1".into()));
    }
    let (o, n) = table.class_counts();
    let per_class = o.min(n);
    if 2 * per_class < k {
        return Err(Error::Folds(format!(
            "balanced control has {} instances, fewer than k = {k}",
            2 * per_class
        )));
    }
    let mut accuracies = Vec::with_capacity(permutations);
    for r in 0..permutations {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1000 + r as u64));
        let mut keep = Vec::new();
        for class in [Class::Osteoporotic, Class::Neoplastic] {
            let mut idx: Vec<usize> = (0..table.len()).filter(|&i| table.rows[i].truth == class).collect();
            idx.shuffle(&mut rng);
            idx.truncate(per_class);
            keep.extend(idx);
        }
        keep.sort_unstable();
        let mut labels: Vec<Class> = keep.iter().map(|&i| table.rows[i].truth).collect();
        labels.shuffle(&mut rng);
        let rows = keep
            .iter()
            .zip(labels)
            .map(|(&i, truth)| {
                let mut row = table.rows[i].clone();
                row.truth = truth;
                row
            })
            .collect();
        let permuted = FeatureTable {
            rows,
            params: table.params,
            manifest: table.manifest.clone(),
        };
        let res = cross_validate(&permuted, condition, cfg, k, derive_seed(seed, r as u64), Grouping::None)?;
        accuracies.push(res.accuracy);
    }
    let mean_accuracy = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    Ok(ControlResult {
        accuracies,
        mean_accuracy,
        per_class,
    })
}
