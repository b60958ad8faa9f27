//! Cohort manifests: patients, their date-ordered studies and per-vertebra
//! ground truth, stored as a TOML document. Volume and label-map paths are
//! relative to the manifest's directory.
//!
//! ```toml
//! schema_version = 1
//!
//! [[patients]]
//! patient_id = "P000"
//!
//! [[patients.studies]]
//! study_id = "P000-S0"
//! patient_id = "P000"
//! acquisition_date = "2010-03-14"
//! age = 64.2
//! gender = "F"
//! volume_path = "P000/S0.vvol"
//! labelmap_path = "P000/S0.vlbl"
//!
//! [[patients.studies.vertebrae]]
//! label = 5
//! truth = "OSTEOPOROTIC"
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::LabelMap;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Truth {
    Osteoporotic,
    Neoplastic,
    Unfractured,
}

impl Truth {
    pub fn is_fractured(self) -> bool {
        !matches!(self, Truth::Unfractured)
    }
}

/// Fracture etiology of a classified instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    #[serde(rename = "O")]
    Osteoporotic,
    #[serde(rename = "N")]
    Neoplastic,
}

impl Class {
    pub fn from_truth(t: Truth) -> Option<Class> {
        match t {
            Truth::Osteoporotic => Some(Class::Osteoporotic),
            Truth::Neoplastic => Some(Class::Neoplastic),
            Truth::Unfractured => None,
        }
    }

    /// SVM target: neoplastic is the positive class.
    pub fn sign(self) -> f64 {
        match self {
            Class::Osteoporotic => -1.0,
            Class::Neoplastic => 1.0,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Class::Osteoporotic => "O",
            Class::Neoplastic => "N",
        }
    }

    pub fn from_code(s: &str) -> Option<Class> {
        match s {
            "O" => Some(Class::Osteoporotic),
            "N" => Some(Class::Neoplastic),
            _ => None,
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
}

impl Gender {
    /// Feature encoding: F = 0, M = 1.
    pub fn code(self) -> f64 {
        match self {
            Gender::F => 0.0,
            Gender::M => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertebraTruth {
    pub label: u16,
    pub truth: Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_id: String,
    pub patient_id: String,
    pub acquisition_date: NaiveDate,
    /// Years at acquisition.
    pub age: f64,
    pub gender: Gender,
    pub volume_path: PathBuf,
    pub labelmap_path: PathBuf,
    #[serde(default)]
    pub vertebrae: Vec<VertebraTruth>,
}

impl StudyRecord {
    pub fn truth_of(&self, label: u16) -> Option<Truth> {
        self.vertebrae.iter().find(|v| v.label == label).map(|v| v.truth)
    }

    /// Every vertebra referenced here must exist in the label map's legend.
    pub fn check_labels(&self, lm: &LabelMap) -> Result<()> {
        for v in &self.vertebrae {
            if lm.level_of(v.label).is_none() {
                return Err(Error::Manifest(format!(
                    "study {}: vertebra label {} is not a vertebra in its label map legend",
                    self.study_id, v.label
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientEntry {
    pub patient_id: String,
    pub studies: Vec<StudyRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub schema_version: u32,
    pub patients: Vec<PatientEntry>,
    /// Directory that relative study paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl CohortManifest {
    pub fn new(patients: Vec<PatientEntry>) -> Self {
        CohortManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            patients,
            base_dir: PathBuf::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: MANIFEST_SCHEMA_VERSION,
            });
        }
        let mut ids = BTreeSet::new();
        for p in &self.patients {
            if !ids.insert(p.patient_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate patient_id {:?}", p.patient_id)));
            }
            for pair in p.studies.windows(2) {
                if pair[1].acquisition_date <= pair[0].acquisition_date {
                    return Err(Error::Manifest(format!(
                        "patient {}: study {} ({}) does not follow {} ({})",
                        p.patient_id,
                        pair[1].study_id,
                        pair[1].acquisition_date,
                        pair[0].study_id,
                        pair[0].acquisition_date
                    )));
                }
            }
            for s in &p.studies {
                if s.patient_id != p.patient_id {
                    return Err(Error::Manifest(format!(
                        "study {} lists patient {} under patient {}",
                        s.study_id, s.patient_id, p.patient_id
                    )));
                }
                if !(s.age >= 0.0) || !s.age.is_finite() {
                    return Err(Error::Manifest(format!("study {}: invalid age {}", s.study_id, s.age)));
                }
                let mut labels = BTreeSet::new();
                for v in &s.vertebrae {
                    if !labels.insert(v.label) {
                        return Err(Error::Manifest(format!(
                            "study {}: vertebra {} listed twice",
                            s.study_id, v.label
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    pub fn studies(&self) -> impl Iterator<Item = &StudyRecord> {
        self.patients.iter().flat_map(|p| p.studies.iter())
    }

    /// Number of (fractured vertebra, study) pairs.
    pub fn fractured_instances(&self) -> usize {
        self.studies()
            .map(|s| s.vertebrae.iter().filter(|v| v.truth.is_fractured()).count())
            .sum()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: CohortManifest = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = CohortManifest::from_toml(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.validate()?;
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}
