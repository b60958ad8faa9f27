//! Committee of SVMs, each on its own selected feature subset, combined by
//! the mean decision value.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::derive_seed;
use super::impute::Imputer;
use super::select::greedy_forward_select;
use super::svm::{fit_svm, SvmModel, SvmParams};
use crate::error::{Error, Result};
use crate::features::{Condition, FeatureVector, N_FEATURES};
use crate::manifest::Class;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Selection {
    None,
    GreedyForward { max_features: usize, inner_folds: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Aggregation {
    #[default]
    MeanDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommitteeConfig {
    pub n_members: usize,
    pub svm: SvmParams,
    pub selection: Selection,
    pub aggregation: Aggregation,
    pub seed: u64,
    /// Give each member its own seed; when false all members share `seed`.
    pub distinct_member_seeds: bool,
}

impl Default for CommitteeConfig {
    fn default() -> Self {
        CommitteeConfig {
            n_members: 5,
            svm: SvmParams::default(),
            selection: Selection::GreedyForward {
                max_features: 5,
                inner_folds: 3,
            },
            aggregation: Aggregation::MeanDecision,
            seed: 0,
            distinct_member_seeds: true,
        }
    }
}

impl CommitteeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_members == 0 {
            return Err(Error::Spec("a committee needs at least one member".into()));
        }
        if let Selection::GreedyForward {
            max_features,
            inner_folds,
        } = self.selection
        {
            if max_features == 0 || inner_folds < 2 {
                return Err(Error::Spec("greedy selection needs max_features >= 1 and inner_folds >= 2".into()));
            }
        }
        self.svm.validate()
    }

    pub fn member_seed(&self, member: usize) -> u64 {
        if self.distinct_member_seeds {
            derive_seed(self.seed, member as u64)
        } else {
            self.seed
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Committee {
    pub condition: Condition,
    pub imputer: Imputer,
    pub members: Vec<SvmModel>,
    pub member_seeds: Vec<u64>,
    pub aggregation: Aggregation,
}

/// Trains every member on all `rows`; only selection differs by seed.
pub fn train_committee(rows: &[&FeatureVector], condition: Condition, cfg: &CommitteeConfig) -> Result<Committee> {
    cfg.validate()?;
    let imputer = Imputer::fit(rows);
    let x: Vec<Vec<f64>> = rows.iter().map(|r| imputer.apply(r)).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.truth.sign()).collect();
    let columns = condition.columns();
    let neo = y.iter().filter(|&&v| v > 0.0).count();
    let majority = if 2 * neo > y.len() { 1.0 } else { -1.0 };

    let member_seeds: Vec<u64> = (0..cfg.n_members).map(|m| cfg.member_seed(m)).collect();
    let members = member_seeds
        .par_iter()
        .map(|&seed| -> Result<SvmModel> {
            let params = SvmParams { seed, ..cfg.svm };
            let subset = match cfg.selection {
                Selection::None => columns.clone(),
                Selection::GreedyForward {
                    max_features,
                    inner_folds,
                } => greedy_forward_select(&x, &y, &columns, inner_folds, max_features, &params, seed)?,
            };
            if subset.is_empty() {
                Ok(SvmModel::constant(N_FEATURES, majority))
            } else {
                fit_svm(&x, &y, &subset, &params)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Committee {
        condition,
        imputer,
        members,
        member_seeds,
        aggregation: cfg.aggregation,
    })
}

impl Committee {
    /// Mean member decision for an already imputed full-width row.
    pub fn decision_imputed(&self, x: &[f64]) -> Result<f64> {
        let mut sum = 0.0;
        for m in &self.members {
            sum += m.decision(x)?;
        }
        Ok(sum / self.members.len() as f64)
    }

    pub fn decision(&self, row: &FeatureVector) -> Result<f64> {
        self.decision_imputed(&self.imputer.apply(row))
    }

    pub fn classify(&self, row: &FeatureVector) -> Result<Class> {
        Ok(if self.decision(row)? > 0.0 {
            Class::Neoplastic
        } else {
            Class::Osteoporotic
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Committee::from_json(&text)
    }
}
