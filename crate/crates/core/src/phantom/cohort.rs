//! Whole-cohort phantom generation.
//!
//! Default generative table (synthetic, not clinical):
//!
//! | quantity                  | osteoporotic patients        | neoplastic patients                  |
//! |---------------------------|------------------------------|--------------------------------------|
//! | gender F probability      | 0.75                         | 0.45                                 |
//! | age at first study        | N(70, 7)                     | N(60, 10)                            |
//! | baseline trabecular HU    | N(110, 25)                   | N(150, 25)                           |
//! | cortical HU               | N(370, 25)                   | N(400, 25)                           |
//! | initial deformity         | anterior wedge or biconcave  | collapse of the lesion cells         |
//! | height loss (mm/yr)       | 0.8-2.0 on the deformed cells| 2.0-5.0 on the lesion cells          |
//! | trabecular change (HU/yr) | -10 to -3                    | -1 to +3 diffuse                     |
//! | focal lesion              | none                         | blastic +80..200 HU (+20..60 /yr) or lytic -60..-120 HU (-10..-30 /yr) |
//!
//! Body size grows with level: AP semi-axis `11 + 0.35 L`, LR semi-axis
//! `14 + 0.6 L`, height `17 + 0.55 L` (mm), scaled per patient by N(1, 0.04).
//! Unfractured vertebrae are stationary.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{advance, quantize_hu, render_vertebra, FocalLesion, ProgressionModel, VertebraSpec};
use crate::error::{Error, Result};
use crate::frame::LocalFrame;
use crate::manifest::{Class, CohortManifest, Gender, PatientEntry, StudyRecord, Truth, VertebraTruth};
use crate::morphometry::{inner_cell, outer_cell, CompassLayout, ANTERIOR_ARCS, ARC_COUNT, CELL_COUNT};
use crate::volume::{save_labelmap, save_volume, Geometry, LabelMap, LabelRole, Volume};

pub const MUSCLE_LABEL: u16 = 100;
pub const FAT_LABEL: u16 = 101;
pub const CANAL_LABEL: u16 = 102;
pub const MUSCLE_HU: f64 = 50.0;
pub const FAT_HU: f64 = -100.0;
const BACKGROUND_HU: f64 = 40.0;
const CANAL_HU: f64 = 20.0;
const CANAL_RADIUS: f64 = 4.0;
const DISC_GAP_MM: f64 = 6.0;
const MARGIN_MM: f64 = 4.0;
const MAX_LEVEL: u32 = 17;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_patients: usize,
    /// Studies per patient; with `studies_per_patient_max` set, each patient
    /// draws a count uniformly from the inclusive range.
    pub studies_per_patient: usize,
    pub studies_per_patient_max: Option<usize>,
    /// Mean interval between consecutive studies, years (jittered +-20%).
    pub study_interval: f64,
    /// Fraction of patients whose fractures are neoplastic.
    pub fraction_neoplastic: f64,
    pub vertebrae_per_patient: usize,
    /// Mean fractured vertebrae per patient; totals are spread evenly.
    pub fractured_per_patient: f64,
    pub spacing: [f64; 3],
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    /// Cohort shape of the reference study: 56 patients with six studies
    /// each and roughly 695 fractured vertebra instances.
    fn default() -> Self {
        CohortSpec {
            n_patients: 56,
            studies_per_patient: 6,
            studies_per_patient_max: None,
            study_interval: 0.5,
            fraction_neoplastic: 0.3,
            vertebrae_per_patient: 5,
            fractured_per_patient: 2.07,
            spacing: [1.0, 1.0, 1.0],
            noise_sd: 20.0,
            seed: 7,
        }
    }
}

impl CohortSpec {
    /// Smaller cohort that runs end to end in well under a minute: 40
    /// patients, four studies, about 300 fractured instances.
    pub fn desk() -> Self {
        CohortSpec {
            n_patients: 40,
            studies_per_patient: 4,
            vertebrae_per_patient: 4,
            fractured_per_patient: 1.9,
            ..CohortSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 || self.studies_per_patient == 0 {
            return Err(Error::Spec("patient and study counts must be >= 1".into()));
        }
        if self.vertebrae_per_patient == 0 {
            return Err(Error::Spec("zero vertebrae requested".into()));
        }
        if self.vertebrae_per_patient > MAX_LEVEL as usize {
            return Err(Error::Spec(format!(
                "at most {MAX_LEVEL} vertebrae per patient, got {}",
                self.vertebrae_per_patient
            )));
        }
        if let Some(max) = self.studies_per_patient_max {
            if max < self.studies_per_patient {
                return Err(Error::Spec("studies_per_patient_max below studies_per_patient".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.fraction_neoplastic) {
            return Err(Error::Spec(format!(
                "fraction_neoplastic must be in [0, 1], got {}",
                self.fraction_neoplastic
            )));
        }
        if !(0.0..=self.vertebrae_per_patient as f64).contains(&self.fractured_per_patient) {
            return Err(Error::Spec(format!(
                "fractured_per_patient must be in [0, {}], got {}",
                self.vertebrae_per_patient, self.fractured_per_patient
            )));
        }
        if !(self.study_interval > 0.0) {
            return Err(Error::Spec("study_interval must be positive".into()));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Spec(format!("invalid spacing {:?}", self.spacing)));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Spec("noise_sd must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedVertebra {
    pub label: u16,
    pub level: u32,
    pub truth: Truth,
    pub base: VertebraSpec,
    pub model: ProgressionModel,
    /// Mid-plane centre, world mm.
    pub center: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyPlan {
    pub study_id: String,
    /// Years since the patient's first study.
    pub offset_years: f64,
    pub date: NaiveDate,
    pub age: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientPlan {
    pub index: usize,
    pub patient_id: String,
    pub etiology: Class,
    pub gender: Gender,
    pub geometry: Geometry,
    pub canal_center: [f64; 2],
    pub reference_boxes: [([f64; 3], [f64; 3]); 2],
    pub vertebrae: Vec<PlannedVertebra>,
    pub studies: Vec<StudyPlan>,
}

impl PatientPlan {
    pub fn volume_path(&self, study: usize) -> PathBuf {
        PathBuf::from(&self.patient_id).join(format!("S{study}.vvol"))
    }

    pub fn labelmap_path(&self, study: usize) -> PathBuf {
        PathBuf::from(&self.patient_id).join(format!("S{study}.vlbl"))
    }

    pub fn spec_at(&self, vertebra: usize, study: usize) -> VertebraSpec {
        let v = &self.vertebrae[vertebra];
        advance(&v.base, &v.model, self.studies[study].offset_years)
    }

    fn entry(&self) -> PatientEntry {
        let studies = self
            .studies
            .iter()
            .enumerate()
            .map(|(k, s)| StudyRecord {
                study_id: s.study_id.clone(),
                patient_id: self.patient_id.clone(),
                acquisition_date: s.date,
                age: s.age,
                gender: self.gender,
                volume_path: self.volume_path(k),
                labelmap_path: self.labelmap_path(k),
                vertebrae: self
                    .vertebrae
                    .iter()
                    .map(|v| VertebraTruth {
                        label: v.label,
                        truth: v.truth,
                    })
                    .collect(),
            })
            .collect();
        PatientEntry {
            patient_id: self.patient_id.clone(),
            studies,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortPlan {
    pub spec: CohortSpec,
    pub patients: Vec<PatientPlan>,
}

impl CohortPlan {
    pub fn manifest(&self) -> CohortManifest {
        CohortManifest::new(self.patients.iter().map(PatientPlan::entry).collect())
    }
}

const PLAN_STREAM: u64 = u64::MAX;

fn patient_rng(seed: u64, patient: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((patient as u64) << 16);
    rng
}

fn study_rng(seed: u64, patient: usize, study: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((patient as u64) << 16) | (study as u64 + 1));
    rng
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("finite sd").sample(rng)
}

/// Evenly spread `n * mean` (floored) over `n` slots: each gets floor or ceil.
fn spread(n: usize, mean: f64) -> Vec<usize> {
    (0..n)
        .map(|i| ((mean * (i + 1) as f64).floor() - (mean * i as f64).floor()) as usize)
        .collect()
}

/// Draws every random parameter of the cohort without rendering anything.
pub fn plan_cohort(spec: &CohortSpec) -> Result<CohortPlan> {
    spec.validate()?;
    let n = spec.n_patients;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(PLAN_STREAM);

    let n_neo = (spec.fraction_neoplastic * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut etiology = vec![Class::Osteoporotic; n];
    for &p in &order[..n_neo] {
        etiology[p] = Class::Neoplastic;
    }
    let mut fractured = spread(n, spec.fractured_per_patient);
    fractured.shuffle(&mut rng);

    let patients = (0..n)
        .map(|p| plan_patient(spec, p, etiology[p], fractured[p]))
        .collect::<Result<Vec<_>>>()?;
    Ok(CohortPlan {
        spec: spec.clone(),
        patients,
    })
}

fn plan_patient(spec: &CohortSpec, index: usize, etiology: Class, n_fractured: usize) -> Result<PatientPlan> {
    let mut rng = patient_rng(spec.seed, index);
    let neo = etiology == Class::Neoplastic;

    let gender = if rng.random_bool(if neo { 0.45 } else { 0.75 }) {
        Gender::F
    } else {
        Gender::M
    };
    let base_age = if neo { normal(&mut rng, 60.0, 10.0) } else { normal(&mut rng, 70.0, 7.0) }.clamp(35.0, 92.0);
    let scale = normal(&mut rng, 1.0, 0.04).clamp(0.9, 1.1);
    let trab = if neo { normal(&mut rng, 150.0, 25.0) } else { normal(&mut rng, 110.0, 25.0) }.clamp(40.0, 260.0);
    let cort = if neo { normal(&mut rng, 400.0, 25.0) } else { normal(&mut rng, 370.0, 25.0) };

    let nv = spec.vertebrae_per_patient;
    let first_level = rng.random_range(1..=(MAX_LEVEL - nv as u32 + 1));
    let mut fractured_slots: Vec<usize> = (0..nv).collect();
    fractured_slots.shuffle(&mut rng);
    fractured_slots.truncate(n_fractured);

    let mut vertebrae = Vec::with_capacity(nv);
    for slot in 0..nv {
        let level = first_level + slot as u32;
        let l = level as f64;
        let radii = ((11.0 + 0.35 * l) * scale, (14.0 + 0.6 * l) * scale);
        let height = (17.0 + 0.55 * l) * scale;
        let mut base = VertebraSpec::uniform(level, radii, height);
        base.trabecular_hu = trab + normal(&mut rng, 0.0, 5.0);
        base.cortical_hu = cort;
        base.cortical_thickness = 2.0;
        base.noise_sd = spec.noise_sd;
        let is_fractured = fractured_slots.contains(&slot);
        let (truth, model) = if !is_fractured {
            (Truth::Unfractured, ProgressionModel::stationary(etiology))
        } else if neo {
            (Truth::Neoplastic, neoplastic_fracture(&mut base, &mut rng))
        } else {
            (Truth::Osteoporotic, osteoporotic_fracture(&mut base, &mut rng))
        };
        vertebrae.push(PlannedVertebra {
            label: level as u16,
            level,
            truth,
            base,
            model,
            center: [0.0; 3],
        });
    }

    let n_studies = match spec.studies_per_patient_max {
        Some(max) => rng.random_range(spec.studies_per_patient..=max),
        None => spec.studies_per_patient,
    };
    let start = NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date")
        + Days::new(rng.random_range(0..1095u64));
    let mut studies = Vec::with_capacity(n_studies);
    let mut offset = 0.0;
    let mut last_day = 0u64;
    for k in 0..n_studies {
        if k > 0 {
            offset += spec.study_interval * rng.random_range(0.8..1.2);
        }
        let day = ((offset * 365.25).round() as u64).max(if k > 0 { last_day + 1 } else { 0 });
        last_day = day;
        let offset_years = day as f64 / 365.25;
        studies.push(StudyPlan {
            study_id: format!("P{index:03}-S{k}"),
            offset_years,
            date: start + Days::new(day),
            age: ((base_age + offset_years) * 100.0).round() / 100.0,
        });
    }

    let (geometry, canal_center, reference_boxes) = lay_out(spec, &mut vertebrae)?;
    Ok(PatientPlan {
        index,
        patient_id: format!("P{index:03}"),
        etiology,
        gender,
        geometry,
        canal_center,
        reference_boxes,
        vertebrae,
        studies,
    })
}

fn scale_cells(spec: &mut VertebraSpec, cells: &[usize], factor: f64) {
    for &c in cells {
        spec.cell_heights[c] *= factor;
    }
}

fn osteoporotic_fracture(base: &mut VertebraSpec, rng: &mut ChaCha8Rng) -> ProgressionModel {
    let severity = rng.random_range(0.15..0.35);
    let rate = rng.random_range(0.8..2.0);
    // (cell, weight) pattern of the deformity
    let pattern: Vec<(usize, f64)> = if rng.random_bool(0.6) {
        let mut p = vec![(0, 0.3)];
        for a in ANTERIOR_ARCS {
            p.push((inner_cell(a), 0.6));
            p.push((outer_cell(a), 1.0));
        }
        p
    } else {
        let mut p = vec![(0, 1.0)];
        p.extend((0..ARC_COUNT).map(|a| (inner_cell(a), 0.6)));
        p
    };
    let mut model = ProgressionModel::stationary(Class::Osteoporotic);
    model.height_rate = [-0.1; CELL_COUNT];
    for (c, w) in pattern {
        base.cell_heights[c] *= 1.0 - severity * w;
        model.height_rate[c] -= rate * w;
    }
    model.trabecular_rate = -rng.random_range(3.0..10.0);
    model
}

fn neoplastic_fracture(base: &mut VertebraSpec, rng: &mut ChaCha8Rng) -> ProgressionModel {
    let start = if rng.random_bool(0.6) {
        3 + rng.random_range(0..3)
    } else {
        rng.random_range(0..ARC_COUNT)
    };
    let mut cells = Vec::new();
    for a in [start, (start + 1) % ARC_COUNT] {
        cells.push(inner_cell(a));
        cells.push(outer_cell(a));
    }
    if rng.random_bool(0.5) {
        cells.push(0);
    }
    scale_cells(base, &cells, 1.0 - rng.random_range(0.2..0.45));

    let (initial, per_year) = if rng.random_bool(0.55) {
        (rng.random_range(80.0..200.0), rng.random_range(20.0..60.0))
    } else {
        (-rng.random_range(60.0..120.0), -rng.random_range(10.0..30.0))
    };
    for &c in &cells {
        base.lesion_hu[c] = initial;
    }
    let mut model = ProgressionModel::stationary(Class::Neoplastic);
    model.height_rate = [-0.2; CELL_COUNT];
    let rate = rng.random_range(2.0..5.0);
    for &c in &cells {
        model.height_rate[c] = -rate;
    }
    model.trabecular_rate = rng.random_range(-1.0..3.0);
    model.focal_lesion = Some(FocalLesion {
        cells,
        hu_delta_per_year: per_year,
    });
    model
}

type Layout = (Geometry, [f64; 2], [([f64; 3], [f64; 3]); 2]);

/// Stacks the bodies along z (lowest level on top), with the canal and the
/// reference boxes posterior to the column. Mid-planes fall on voxel centres.
fn lay_out(spec: &CohortSpec, vertebrae: &mut [PlannedVertebra]) -> Result<Layout> {
    let s = spec.spacing;
    let max_a = vertebrae.iter().map(|v| v.base.body_radii.0).fold(0.0, f64::max);
    let max_b = vertebrae.iter().map(|v| v.base.body_radii.1).fold(0.0, f64::max);

    let half_x = (max_b + MARGIN_MM).max(18.0);
    let kx = (half_x / s[0]).ceil() as usize;
    let ky_post = ((max_a + 24.0) / s[1]).ceil() as usize;
    let ky_ant = ((max_a + MARGIN_MM) / s[1]).ceil() as usize;

    let mut cursor = MARGIN_MM;
    for v in vertebrae.iter_mut().rev() {
        let h = v.base.max_height();
        let z = ((cursor + h / 2.0) / s[2]).ceil() * s[2];
        v.center = [0.0, 0.0, z];
        cursor = z + h / 2.0 + DISC_GAP_MM;
    }
    let z_top = cursor - DISC_GAP_MM + MARGIN_MM;
    let nz = (z_top / s[2]).ceil() as usize + 1;

    let geometry = Geometry::new(
        [2 * kx + 1, ky_post + ky_ant + 1, nz],
        s,
        [-(kx as f64) * s[0], -(ky_post as f64) * s[1], 0.0],
    )?;
    let canal = [0.0, -(max_a + 7.0)];
    let z_span = (2.0, z_top - 2.0);
    let y_span = (-(max_a + 22.0), -(max_a + 14.0));
    let muscle = ([-16.0, y_span.0, z_span.0], [-4.0, y_span.1, z_span.1]);
    let fat = ([4.0, y_span.0, z_span.0], [16.0, y_span.1, z_span.1]);
    Ok((geometry, canal, [muscle, fat]))
}

fn in_box(p: [f64; 3], b: &([f64; 3], [f64; 3])) -> bool {
    (0..3).all(|k| p[k] >= b.0[k] && p[k] <= b.1[k])
}

/// Renders one study of a planned patient.
pub fn render_study(plan: &PatientPlan, study: usize, seed: u64, noise_sd: f64) -> Result<(Volume, LabelMap)> {
    let g = plan.geometry;
    let mut rng = study_rng(seed, plan.index, study);
    let mut hu = vec![BACKGROUND_HU; g.len()];
    let mut lm = LabelMap::empty(g);
    lm.insert_role(MUSCLE_LABEL, LabelRole::MuscleRef);
    lm.insert_role(FAT_LABEL, LabelRole::FatRef);
    lm.insert_role(CANAL_LABEL, LabelRole::Canal);

    for (i, value) in hu.iter_mut().enumerate() {
        let p = g.world(g.coord(i));
        let dx = p[0] - plan.canal_center[0];
        let dy = p[1] - plan.canal_center[1];
        if dx * dx + dy * dy <= CANAL_RADIUS * CANAL_RADIUS {
            *value = CANAL_HU;
            lm.set(i, CANAL_LABEL);
        } else if in_box(p, &plan.reference_boxes[0]) {
            *value = MUSCLE_HU;
            lm.set(i, MUSCLE_LABEL);
        } else if in_box(p, &plan.reference_boxes[1]) {
            *value = FAT_HU;
            lm.set(i, FAT_LABEL);
        }
    }

    let layout = CompassLayout::default();
    let mut in_body = vec![false; g.len()];
    for (k, v) in plan.vertebrae.iter().enumerate() {
        let spec = plan.spec_at(k, study);
        let frame = LocalFrame::axis_aligned(v.center);
        let body = render_vertebra(&spec, &frame, &g, &layout, &mut rng)?;
        for (j, &i) in body.indices.iter().enumerate() {
            hu[i] = body.hu[j];
            in_body[i] = true;
            lm.set(i, v.label);
        }
        lm.insert_role(v.label, LabelRole::Vertebra { level: v.level });
    }

    if noise_sd > 0.0 {
        let n = Normal::new(0.0, noise_sd).expect("finite sd");
        for (i, value) in hu.iter_mut().enumerate() {
            if !in_body[i] {
                *value += n.sample(&mut rng);
            }
        }
    }
    let volume = Volume::new(g, hu.into_iter().map(quantize_hu).collect())?;
    lm.validate()?;
    Ok((volume, lm))
}

/// Plans, renders and writes a cohort under `out_dir`, returning the saved
/// manifest (`out_dir/manifest.toml`). Output bytes depend only on `spec`.
pub fn generate_cohort(spec: &CohortSpec, out_dir: &Path) -> Result<CohortManifest> {
    let plan = plan_cohort(spec)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    plan.patients.par_iter().try_for_each(|p| -> Result<()> {
        let dir = out_dir.join(&p.patient_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for k in 0..p.studies.len() {
            let (vol, lm) = render_study(p, k, spec.seed, spec.noise_sd)
                .map_err(|e| e.with_context(format!("rendering {}", p.studies[k].study_id)))?;
            save_volume(&vol, out_dir.join(p.volume_path(k)))?;
            save_labelmap(&lm, out_dir.join(p.labelmap_path(k)))?;
        }
        Ok(())
    })?;
    let mut manifest = plan.manifest();
    manifest.save(out_dir.join("manifest.toml"))?;
    manifest.base_dir = out_dir.to_path_buf();
    Ok(manifest)
}
