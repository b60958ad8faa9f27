//! Per-instance feature vectors: 18 measured values, 16 per-year rates
//! against the previous study, and two demographic fields.
//!
//! Serialized as CSV (`patient_id,study_id,label,<36 features>,truth`) with
//! empty fields for missing values, plus a TOML sidecar holding the
//! extraction parameters and the imputation mask.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densitometry::{density_features, DEFAULT_EROSION_RADIUS_MM};
use crate::error::{Error, Result};
use crate::frame::vertebra_frame;
use crate::manifest::{Class, CohortManifest, StudyRecord};
use crate::morphometry::{contrast_features, height_features, CompassLayout, HeightFeatures};
use crate::volume::{load_labelmap_paired, load_volume, LabelMap, Volume};

pub const N_MEASURED: usize = 18;
pub const N_LONGITUDINAL: usize = 16;
pub const N_FEATURES: usize = 36;

/// Canonical column order.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "h_c", "h_a", "h_p", "h_l", "h_r", "h_avg", "h_avg_5", "contrastP", "contrastN", "contrastA", "vid",
    "Anterior", "Center", "Posterior", "manualMean", "meanH", "meanDen", "meanTrab",
    "R_h_c", "R_h_a", "R_h_p", "R_h_l", "R_h_r", "R_h_avg", "R_h_avg_5", "R_contrastP", "R_contrastN",
    "R_contrastA", "R_Anterior", "R_Center", "R_Posterior", "R_manualMean", "R_meanDen", "R_meanTrab",
    "Gender", "Age",
];

/// Measured column behind each rate column.
pub const RATE_SOURCES: [usize; N_LONGITUDINAL] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 11, 12, 13, 14, 16, 17];

pub const GENDER: usize = 34;
pub const AGE: usize = 35;

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

/// Imputation family of a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    General,
    Contrast,
    Rate,
}

pub fn feature_kind(index: usize) -> FeatureKind {
    match index {
        7..=9 => FeatureKind::Contrast,
        18..=33 => FeatureKind::Rate,
        _ => FeatureKind::General,
    }
}

/// Feature-set conditions compared in the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Condition {
    Measured,
    Longitudinal,
    Combined,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Measured, Condition::Longitudinal, Condition::Combined];

    /// Column indices used by this condition. Demographics join both
    /// single-family sets.
    pub fn columns(self) -> Vec<usize> {
        match self {
            Condition::Measured => (0..N_MEASURED).chain([GENDER, AGE]).collect(),
            Condition::Longitudinal => (N_MEASURED..N_MEASURED + N_LONGITUDINAL).chain([GENDER, AGE]).collect(),
            Condition::Combined => (0..N_FEATURES).collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::Measured => "measured",
            Condition::Longitudinal => "longitudinal",
            Condition::Combined => "combined",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Spec(format!("unknown condition {s:?} (measured, longitudinal, combined)")))
    }
}

/// Handling of instances without a previous study of the same vertebra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FirstStudyPolicy {
    /// Drop the instance.
    Exclude,
    /// Rates set to 0 and flagged in the mask.
    #[default]
    Zero,
    /// Previous values copied from the current study: rates 0, unflagged.
    Carry,
}

impl FromStr for FirstStudyPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exclude" => Ok(FirstStudyPolicy::Exclude),
            "zero" => Ok(FirstStudyPolicy::Zero),
            "carry" => Ok(FirstStudyPolicy::Carry),
            _ => Err(Error::Spec(format!("unknown first-study policy {s:?} (exclude, zero, carry)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionParams {
    pub erosion_radius_mm: f64,
    pub compass_r1: f64,
    pub compass_r2: f64,
    pub policy: FirstStudyPolicy,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        let layout = CompassLayout::default();
        ExtractionParams {
            erosion_radius_mm: DEFAULT_EROSION_RADIUS_MM,
            compass_r1: layout.r1_fraction,
            compass_r2: layout.r2_fraction,
            policy: FirstStudyPolicy::Zero,
        }
    }
}

impl ExtractionParams {
    pub fn layout(&self) -> Result<CompassLayout> {
        CompassLayout::new(self.compass_r1, self.compass_r2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstanceId {
    pub patient_id: String,
    pub study_id: String,
    pub label: u16,
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.patient_id, self.study_id, self.label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub id: InstanceId,
    /// Values in canonical order; `None` is missing.
    pub values: [Option<f64>; N_FEATURES],
    /// Set where a value is missing or was filled in rather than measured.
    pub mask: [bool; N_FEATURES],
    pub truth: Class,
}

impl FeatureVector {
    pub fn measured(&self) -> &[Option<f64>] {
        &self.values[..N_MEASURED]
    }

    pub fn longitudinal(&self) -> &[Option<f64>] {
        &self.values[N_MEASURED..N_MEASURED + N_LONGITUDINAL]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub rows: Vec<FeatureVector>,
    pub params: ExtractionParams,
    pub manifest: Option<PathBuf>,
}

impl FeatureTable {
    pub fn names(&self) -> &'static [&'static str; N_FEATURES] {
        &FEATURE_NAMES
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn truths(&self) -> Vec<Class> {
        self.rows.iter().map(|r| r.truth).collect()
    }

    pub fn ids(&self) -> Vec<InstanceId> {
        self.rows.iter().map(|r| r.id.clone()).collect()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let n = self.rows.iter().filter(|r| r.truth == Class::Neoplastic).count();
        (self.rows.len() - n, n)
    }
}

/// Per-year rate of change. Missing if either value is missing.
pub fn rate(current: Option<f64>, previous: Option<f64>, dt: f64) -> Result<Option<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Spec(format!("rate needs dt > 0, got {dt}")));
    }
    Ok(match (current, previous) {
        (Some(c), Some(p)) => Some((c - p) / dt),
        _ => None,
    })
}

/// The 18 measured values of one vertebra.
pub type Measured = [Option<f64>; N_MEASURED];

fn measured_array(h: &HeightFeatures, mean_den: f64, mean_trab: f64) -> Measured {
    [
        h.h_c,
        h.h_a,
        h.h_p,
        h.h_l,
        h.h_r,
        h.h_avg,
        h.h_avg_5,
        h.contrast_p,
        h.contrast_n,
        h.contrast_a,
        Some(h.vid as f64),
        h.anterior,
        h.center,
        h.posterior,
        h.manual_mean,
        h.mean_h,
        Some(mean_den),
        Some(mean_trab),
    ]
}

/// Measured features of every manifest-listed vertebra in one loaded study.
/// Contrasts use all vertebrae of the legend.
pub fn study_features(
    study: &StudyRecord,
    volume: &Volume,
    lm: &LabelMap,
    params: &ExtractionParams,
) -> Result<BTreeMap<u16, Measured>> {
    let layout = params.layout()?;
    study.check_labels(lm)?;
    let listed: BTreeSet<u16> = study.vertebrae.iter().map(|v| v.label).collect();

    let mut heights: BTreeMap<u16, (u32, Option<HeightFeatures>)> = BTreeMap::new();
    let mut frames = BTreeMap::new();
    for (label, level) in lm.vertebrae() {
        let ctx = || format!("study {} vertebra {label}", study.study_id);
        let h = vertebra_frame(lm, label, None).and_then(|f| {
            let h = height_features(lm, label, &f, &layout)?;
            frames.insert(label, f);
            Ok(h)
        });
        match h {
            Ok(h) => {
                heights.insert(label, (level, Some(h)));
            }
            // neighbours that cannot be measured only lose their contrast role
            Err(e) if listed.contains(&label) => return Err(e.with_context(ctx())),
            Err(_) => {
                heights.insert(label, (level, None));
            }
        }
    }

    let levels: Vec<(u32, Option<f64>)> = heights
        .values()
        .map(|(level, h)| (*level, h.as_ref().and_then(|h| h.h_avg)))
        .collect();
    let contrasts = contrast_features(&levels);

    let mut out = BTreeMap::new();
    for ((label, (_, h)), c) in heights.iter().zip(contrasts) {
        if !listed.contains(label) {
            continue;
        }
        let mut h = h.clone().expect("listed vertebrae were measured");
        h.contrast_p = c.p;
        h.contrast_n = c.n;
        h.contrast_a = c.a;
        let d = density_features(volume, lm, *label, &frames[label], params.erosion_radius_mm)
            .map_err(|e| e.with_context(format!("study {} vertebra {label}", study.study_id)))?;
        out.insert(*label, measured_array(&h, d.mean_den, d.mean_trab));
    }
    Ok(out)
}

fn load_study(manifest: &CohortManifest, study: &StudyRecord) -> Result<(Volume, LabelMap)> {
    let volume = load_volume(manifest.resolve(&study.volume_path))?;
    let lm = load_labelmap_paired(manifest.resolve(&study.labelmap_path), &volume)?;
    Ok((volume, lm))
}

/// Measured values of one vertebra in one study, followed by the two
/// demographic values (gender, age).
pub fn measured_features(
    manifest: &CohortManifest,
    study: &StudyRecord,
    label: u16,
    params: &ExtractionParams,
) -> Result<(Measured, [f64; 2])> {
    let (volume, lm) = load_study(manifest, study)?;
    let mut single = study.clone();
    single.vertebrae.retain(|v| v.label == label);
    if single.vertebrae.is_empty() {
        return Err(Error::Manifest(format!(
            "study {}: vertebra {label} is not listed",
            study.study_id
        )));
    }
    let m = study_features(&single, &volume, &lm, params)?;
    Ok((m[&label], [study.gender.code(), study.age]))
}

fn days_between(a: chrono::NaiveDate, b: chrono::NaiveDate) -> f64 {
    (b - a).num_days() as f64
}

/// Builds the feature table of every fractured (vertebra, study) instance.
pub fn assemble(manifest: &CohortManifest, params: &ExtractionParams) -> Result<FeatureTable> {
    manifest.validate()?;
    params.layout()?;
    let studies: Vec<&StudyRecord> = manifest.studies().collect();
    let extracted: Vec<BTreeMap<u16, Measured>> = studies
        .par_iter()
        .map(|s| {
            let (volume, lm) = load_study(manifest, s).map_err(|e| e.with_context(format!("study {}", s.study_id)))?;
            study_features(s, &volume, &lm, params)
        })
        .collect::<Result<_>>()?;
    let by_study: BTreeMap<&str, &BTreeMap<u16, Measured>> =
        studies.iter().map(|s| s.study_id.as_str()).zip(extracted.iter()).collect();

    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for patient in &manifest.patients {
        for (k, study) in patient.studies.iter().enumerate() {
            let current = by_study[study.study_id.as_str()];
            let previous = k.checked_sub(1).map(|j| &patient.studies[j]);
            for v in &study.vertebrae {
                let Some(truth) = Class::from_truth(v.truth) else {
                    continue;
                };
                let id = InstanceId {
                    patient_id: patient.patient_id.clone(),
                    study_id: study.study_id.clone(),
                    label: v.label,
                };
                if !seen.insert(id.clone()) {
                    return Err(Error::Manifest(format!("duplicate instance {id}")));
                }
                let cur = current[&v.label];
                let prior = previous.and_then(|p| by_study[p.study_id.as_str()].get(&v.label).map(|m| (p, m)));

                let mut values = [None; N_FEATURES];
                let mut mask = [false; N_FEATURES];
                values[..N_MEASURED].copy_from_slice(&cur);
                match prior {
                    Some((p, prev)) => {
                        let dt = days_between(p.acquisition_date, study.acquisition_date) / 365.25;
                        for (r, &src) in RATE_SOURCES.iter().enumerate() {
                            values[N_MEASURED + r] = rate(cur[src], prev[src], dt)?;
                        }
                    }
                    None => match params.policy {
                        FirstStudyPolicy::Exclude => continue,
                        FirstStudyPolicy::Zero => {
                            for r in 0..N_LONGITUDINAL {
                                values[N_MEASURED + r] = Some(0.0);
                                mask[N_MEASURED + r] = true;
                            }
                        }
                        FirstStudyPolicy::Carry => {
                            for (r, &src) in RATE_SOURCES.iter().enumerate() {
                                values[N_MEASURED + r] = cur[src].map(|_| 0.0);
                            }
                        }
                    },
                }
                values[GENDER] = Some(study.gender.code());
                values[AGE] = Some(study.age);
                for (m, v) in mask.iter_mut().zip(&values) {
                    *m |= v.is_none();
                }
                rows.push(FeatureVector { id, values, mask, truth });
            }
        }
    }
    Ok(FeatureTable {
        rows,
        params: *params,
        manifest: None,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskEntry {
    row: usize,
    columns: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest: Option<PathBuf>,
    params: ExtractionParams,
    columns: Vec<String>,
    #[serde(default)]
    mask: Vec<MaskEntry>,
}

/// Path of the sidecar written next to a feature CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".toml");
    csv.with_file_name(name)
}

fn header() -> Vec<&'static str> {
    let mut h = vec!["patient_id", "study_id", "label"];
    h.extend(FEATURE_NAMES);
    h.push("truth");
    h
}

/// Writes the CSV and its sidecar.
pub fn write_table(table: &FeatureTable, csv_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path).map_err(|e| Error::Table(format!("{}: {e}", csv_path.display())))?;
    w.write_record(header())?;
    for row in &table.rows {
        let mut rec = vec![row.id.patient_id.clone(), row.id.study_id.clone(), row.id.label.to_string()];
        rec.extend(row.values.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        rec.push(row.truth.code().to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;

    let mask = table
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.mask.iter().any(|&m| m))
        .map(|(row, r)| MaskEntry {
            row,
            columns: (0..N_FEATURES)
                .filter(|&i| r.mask[i])
                .map(|i| FEATURE_NAMES[i].to_string())
                .collect(),
        })
        .collect();
    let sidecar = Sidecar {
        schema_version: 1,
        manifest: table.manifest.clone(),
        params: table.params,
        columns: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        mask,
    };
    let text = toml::to_string(&sidecar).map_err(|e| Error::Table(e.to_string()))?;
    let side = sidecar_path(csv_path);
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

/// Reads a feature CSV. The sidecar is optional; without it the mask marks
/// only empty fields and parameters take their defaults.
pub fn read_table(csv_path: &Path) -> Result<FeatureTable> {
    let mut r = csv::Reader::from_path(csv_path).map_err(|e| Error::Table(format!("{}: {e}", csv_path.display())))?;
    let expected = header();
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found != expected {
        return Err(Error::Table(format!(
            "{}: header does not match the canonical column order",
            csv_path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Table(format!("{} row {}: {what}", csv_path.display(), i + 1));
        let label: u16 = rec[2].parse().map_err(|_| bad("bad label"))?;
        let mut values = [None; N_FEATURES];
        let mut mask = [false; N_FEATURES];
        for k in 0..N_FEATURES {
            let field = &rec[3 + k];
            if field.is_empty() {
                mask[k] = true;
            } else {
                let v: f64 = field.parse().map_err(|_| bad(&format!("bad value in {}", FEATURE_NAMES[k])))?;
                values[k] = Some(v);
            }
        }
        let truth = Class::from_code(&rec[3 + N_FEATURES]).ok_or_else(|| bad("truth must be O or N"))?;
        rows.push(FeatureVector {
            id: InstanceId {
                patient_id: rec[0].to_string(),
                study_id: rec[1].to_string(),
                label,
            },
            values,
            mask,
            truth,
        });
    }

    let side = sidecar_path(csv_path);
    let (params, manifest) = if side.exists() {
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sc: Sidecar = toml::from_str(&text).map_err(|e| Error::Table(format!("{}: {e}", side.display())))?;
        for entry in sc.mask {
            let row = rows
                .get_mut(entry.row)
                .ok_or_else(|| Error::Table(format!("{}: mask row {} out of range", side.display(), entry.row)))?;
            for name in entry.columns {
                let k = feature_index(&name)
                    .ok_or_else(|| Error::Table(format!("{}: unknown column {name}", side.display())))?;
                row.mask[k] = true;
            }
        }
        (sc.params, sc.manifest)
    } else {
        (ExtractionParams::default(), None)
    };
    Ok(FeatureTable { rows, params, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_contract() {
        assert_eq!(FEATURE_NAMES.len(), 36);
        let unique: BTreeSet<_> = FEATURE_NAMES.iter().collect();
        assert_eq!(unique.len(), 36);
        for (r, &src) in RATE_SOURCES.iter().enumerate() {
            assert_eq!(FEATURE_NAMES[N_MEASURED + r], format!("R_{}", FEATURE_NAMES[src]));
        }
        assert_eq!(Condition::Measured.columns().len(), 20);
        assert_eq!(Condition::Longitudinal.columns().len(), 18);
        assert_eq!(Condition::Combined.columns().len(), 36);
    }

    #[test]
    fn rate_rules() {
        assert_eq!(rate(Some(17.0), Some(20.0), 0.5).unwrap(), Some(-6.0));
        assert_eq!(rate(Some(3.0), Some(3.0), 2.0).unwrap(), Some(0.0));
        assert_eq!(rate(Some(3.0), None, 2.0).unwrap(), None);
        assert!(rate(Some(3.0), Some(1.0), 0.0).is_err());
    }

    #[test]
    fn policy_and_condition_parse() {
        assert_eq!("ZERO".parse::<FirstStudyPolicy>().unwrap(), FirstStudyPolicy::Zero);
        assert_eq!("exclude".parse::<FirstStudyPolicy>().unwrap(), FirstStudyPolicy::Exclude);
        assert!("none".parse::<FirstStudyPolicy>().is_err());
        assert_eq!("Combined".parse::<Condition>().unwrap(), Condition::Combined);
    }

    #[test]
    fn csv_round_trip_keeps_precision_and_mask() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut values = [Some(0.1 + 0.2); N_FEATURES];
        values[3] = None;
        values[20] = Some(0.0);
        let mut mask = [false; N_FEATURES];
        mask[3] = true;
        mask[20] = true;
        let table = FeatureTable {
            rows: vec![FeatureVector {
                id: InstanceId {
                    patient_id: "P1".into(),
                    study_id: "S1".into(),
                    label: 4,
                },
                values,
                mask,
                truth: Class::Neoplastic,
            }],
            params: ExtractionParams::default(),
            manifest: None,
        };
        write_table(&table, &path).unwrap();
        let back = read_table(&path).unwrap();
        assert_eq!(back, table);
        // without the sidecar, only the empty field stays masked
        fs::remove_file(sidecar_path(&path)).unwrap();
        let bare = read_table(&path).unwrap();
        assert!(bare.rows[0].mask[3] && !bare.rows[0].mask[20]);
    }
}
