//! Scene and table builders shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::TAU;

pub mod fisher;
pub mod qp;

use fracture_core::features::{ExtractionParams, FeatureTable, FeatureVector, InstanceId, N_FEATURES, N_MEASURED};
use fracture_core::morphometry::{arc_center, inner_cell, outer_cell, CompassLayout, ARC_COUNT};
use fracture_core::phantom::{render_vertebra, RenderedBody, VertebraSpec};
use fracture_core::{Class, Geometry, LabelMap, LabelRole, LocalFrame, Volume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MUSCLE: u16 = 100;
pub const FAT: u16 = 101;
pub const MUSCLE_HU: i16 = 50;
pub const FAT_HU: i16 = -100;
const GAP: f64 = 6.0;
const MARGIN: f64 = 4.0;
const REF_DEPTH: f64 = 6.0;

pub struct Scene {
    pub volume: Volume,
    pub labels: LabelMap,
    /// Label of each spec, in input order.
    pub ids: Vec<u16>,
    /// Rendering frame of each body (centroid = body mid-plane centre).
    pub frames: Vec<LocalFrame>,
    pub bodies: Vec<RenderedBody>,
}

pub fn label_of(level: u32) -> u16 {
    level as u16
}

/// Bodies stacked along -z in input order with muscle and fat boxes behind
/// them, world-axis aligned (superior +z, anterior +y).
pub fn scene(specs: &[VertebraSpec], spacing: [f64; 3]) -> Scene {
    scene_at(specs, spacing, [0, 0, 0])
}

/// As [`scene`], with every structure shifted by whole voxels.
pub fn scene_at(specs: &[VertebraSpec], spacing: [f64; 3], shift: [usize; 3]) -> Scene {
    let a = specs.iter().map(|s| s.body_radii.0).fold(0.0, f64::max);
    let b = specs.iter().map(|s| s.body_radii.1).fold(0.0, f64::max);
    let h = specs.iter().map(|s| s.max_height()).fold(0.0, f64::max);
    let pitch = h + GAP;
    let lo = [
        -(b + MARGIN),
        -(a + MARGIN + REF_DEPTH + 2.0),
        -((specs.len() - 1) as f64 * pitch + h / 2.0 + MARGIN),
    ];
    let hi = [b + MARGIN, a + MARGIN, h / 2.0 + MARGIN];
    let mut dims = [0usize; 3];
    let mut origin = [0.0; 3];
    for ax in 0..3 {
        dims[ax] = ((hi[ax] - lo[ax]) / spacing[ax]).ceil() as usize + 1 + 2 * shift[ax];
        origin[ax] = lo[ax] - shift[ax] as f64 * spacing[ax];
    }
    let geometry = Geometry::new(dims, spacing, origin).unwrap();
    let mut volume = Volume::filled(geometry, 0).unwrap();
    let mut labels = LabelMap::empty(geometry);
    let layout = CompassLayout::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let mut ids = Vec::new();
    let mut frames = Vec::new();
    let mut bodies = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let frame = LocalFrame::axis_aligned([0.0, 0.0, -(i as f64) * pitch]);
        let body = render_vertebra(spec, &frame, &geometry, &layout, &mut rng).unwrap();
        let label = label_of(spec.level);
        labels.insert_role(label, LabelRole::Vertebra { level: spec.level });
        body.stamp(&mut volume, &mut labels, label);
        ids.push(label);
        frames.push(frame);
        bodies.push(body);
    }

    labels.insert_role(MUSCLE, LabelRole::MuscleRef);
    labels.insert_role(FAT, LabelRole::FatRef);
    let y_max = -(a + MARGIN);
    for idx in 0..geometry.len() {
        let p = geometry.world(geometry.coord(idx));
        if p[1] > y_max || p[1] < y_max - REF_DEPTH {
            continue;
        }
        if p[0] < -2.0 {
            labels.set(idx, MUSCLE);
            volume.set(idx, MUSCLE_HU);
        } else if p[0] > 2.0 {
            labels.set(idx, FAT);
            volume.set(idx, FAT_HU);
        }
    }
    labels.validate().unwrap();
    Scene {
        volume,
        labels,
        ids,
        frames,
        bodies,
    }
}

pub fn body_radii() -> (f64, f64) {
    (15.0, 20.0)
}

pub fn uniform(level: u32, height: f64) -> VertebraSpec {
    VertebraSpec::uniform(level, body_radii(), height)
}

/// Anterior arc at `low`, posterior arc at `high`, cosine in between; the
/// centre cell sits at the mean.
pub fn wedge(level: u32, low: f64, high: f64) -> VertebraSpec {
    let mut s = uniform(level, high);
    let mid = 0.5 * (low + high);
    let half = 0.5 * (high - low);
    for arc in 0..ARC_COUNT {
        let h = mid - half * arc_center(arc).cos();
        s.cell_heights[inner_cell(arc)] = h;
        s.cell_heights[outer_cell(arc)] = h;
    }
    s.cell_heights[0] = mid;
    s
}

/// Centre cell and inner ring at `center`, outer ring at `rim`.
pub fn biconcave(level: u32, center: f64, rim: f64) -> VertebraSpec {
    let mut s = uniform(level, rim);
    s.cell_heights[0] = center;
    for arc in 0..ARC_COUNT {
        s.cell_heights[inner_cell(arc)] = center;
    }
    s
}

/// Cell of an in-plane point of an elliptical body with radii (a, b),
/// computed from the analytic ellipse rather than a voxel footprint.
pub fn analytic_cell(ap: f64, lr: f64, radii: (f64, f64), layout: &CompassLayout) -> usize {
    let rho = ((ap / radii.0).powi(2) + (lr / radii.1).powi(2)).sqrt();
    let mut phi = (-lr).atan2(ap);
    if phi < 0.0 {
        phi += TAU;
    }
    if rho < layout.r1_fraction {
        0
    } else {
        let arc = ((phi + TAU / 16.0) / (TAU / 8.0)).floor() as usize % 8;
        if rho < layout.r2_fraction {
            1 + arc
        } else {
            9 + arc
        }
    }
}

/// Feature rows whose listed columns take the given values and every other
/// column a constant.
pub fn table(rows: &[(Vec<(usize, f64)>, Class)]) -> FeatureTable {
    let rows = rows
        .iter()
        .enumerate()
        .map(|(i, (vals, truth))| {
            let mut values = [Some(1.0); N_FEATURES];
            for &(c, v) in vals {
                values[c] = Some(v);
            }
            FeatureVector {
                id: InstanceId {
                    patient_id: format!("P{:03}", i / 4),
                    study_id: format!("P{:03}-S{}", i / 4, i % 4),
                    label: 1,
                },
                values,
                mask: [false; N_FEATURES],
                truth: *truth,
            }
        })
        .collect();
    FeatureTable {
        rows,
        params: ExtractionParams::default(),
        manifest: None,
    }
}

/// Rows whose measured columns shift with the class by `sep` standard
/// deviations.
pub fn separated(n: usize, sep: f64, seed: u64) -> FeatureTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<_> = (0..n)
        .map(|i| {
            let truth = if i % 10 < 7 { Class::Osteoporotic } else { Class::Neoplastic };
            let shift = if truth == Class::Neoplastic { sep } else { 0.0 };
            let vals = (0..N_MEASURED).map(|c| (c, rng.random_range(-1.0..1.0) + if c < 4 { shift } else { 0.0 })).collect();
            (vals, truth)
        })
        .collect();
    table(&rows)
}
