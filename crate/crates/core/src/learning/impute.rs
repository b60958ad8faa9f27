//! Fill-in of masked feature values from training rows.

use serde::{Deserialize, Serialize};

use crate::features::{feature_kind, FeatureKind, FeatureVector, N_FEATURES};

/// Per-column fill values: the training mean for general features, 1.0 for
/// contrasts and 0.0 for rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    pub fill: Vec<f64>,
}

impl Imputer {
    pub fn fit(rows: &[&FeatureVector]) -> Self {
        let fill = (0..N_FEATURES)
            .map(|k| match feature_kind(k) {
                FeatureKind::Contrast => 1.0,
                FeatureKind::Rate => 0.0,
                FeatureKind::General => {
                    let (sum, n) = rows
                        .iter()
                        .filter(|r| !r.mask[k])
                        .filter_map(|r| r.values[k])
                        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                    if n > 0 {
                        sum / n as f64
                    } else {
                        0.0
                    }
                }
            })
            .collect();
        Imputer { fill }
    }

    /// Full-width row with every masked or missing value replaced.
    pub fn apply(&self, row: &FeatureVector) -> Vec<f64> {
        (0..N_FEATURES)
            .map(|k| match row.values[k] {
                Some(v) if !row.mask[k] => v,
                _ => self.fill[k],
            })
            .collect()
    }
}
