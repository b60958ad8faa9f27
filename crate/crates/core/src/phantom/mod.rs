//! Synthetic spine phantoms with known per-cell heights and densities.
//!
//! A vertebral body is an elliptical cylinder centred on its frame's
//! mid-plane. Each axial column spans `[-h/2, +h/2]` along the superior axis,
//! where `h` is the compass-cell height at that column blended bilinearly
//! (radius x azimuth) across narrow bands around cell boundaries. Voxels
//! within `cortical_thickness` of the body surface are cortical; the rest are
//! trabecular, offset per cell by any focal lesion.

mod cohort;

pub use cohort::{
    generate_cohort, plan_cohort, render_study, CohortPlan, CohortSpec, PatientPlan, PlannedVertebra, StudyPlan,
    CANAL_LABEL, FAT_HU, FAT_LABEL, MUSCLE_HU, MUSCLE_LABEL,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frame::LocalFrame;
use crate::manifest::Class;
use crate::morphology::SubGrid;
use crate::morphometry::{arc_of, azimuth, CompassLayout, ARC_COUNT, CELL_COUNT};
use crate::volume::{Geometry, LabelMap, Volume, HU_MAX, HU_MIN};

/// Half-width of the radial blend band, in normalized radius.
const RADIAL_BLEND: f64 = 0.04;
/// Half-width of the angular blend band (radians).
const ANGULAR_BLEND: f64 = 4.0 * std::f64::consts::PI / 180.0;
/// Heights never drop below this (mm).
pub const MIN_CELL_HEIGHT: f64 = 1.0;
/// Offset (mm) applied before the slab test so that voxel centres lying
/// exactly on a boundary fall on the same side despite round-off.
const BOUNDARY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct VertebraSpec {
    pub level: u32,
    /// Semi-axes (anterior-posterior, left-right), mm.
    pub body_radii: (f64, f64),
    /// Target height per compass cell, mm.
    pub cell_heights: [f64; CELL_COUNT],
    pub trabecular_hu: f64,
    pub cortical_hu: f64,
    pub cortical_thickness: f64,
    pub noise_sd: f64,
    /// Per-cell trabecular HU offset from focal lesions.
    pub lesion_hu: [f64; CELL_COUNT],
}

impl VertebraSpec {
    pub fn uniform(level: u32, body_radii: (f64, f64), height: f64) -> Self {
        VertebraSpec {
            level,
            body_radii,
            cell_heights: [height; CELL_COUNT],
            trabecular_hu: 150.0,
            cortical_hu: 400.0,
            cortical_thickness: 2.0,
            noise_sd: 0.0,
            lesion_hu: [0.0; CELL_COUNT],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cell_heights.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::Spec("cell heights must be positive".into()));
        }
        let (a, b) = self.body_radii;
        if !(self.cortical_thickness > 0.0) || !(a > self.cortical_thickness) || !(b > self.cortical_thickness) {
            return Err(Error::Spec(format!(
                "need radii {:?} > cortical thickness {} > 0",
                self.body_radii, self.cortical_thickness
            )));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Spec(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        Ok(())
    }

    pub fn max_height(&self) -> f64 {
        self.cell_heights.iter().copied().fold(0.0, f64::max)
    }

    /// Blended height (mm) at normalized elliptical radius `rho` and compass
    /// azimuth `phi`.
    pub fn height_at(&self, rho: f64, phi: f64, layout: &CompassLayout) -> f64 {
        let mut h = 0.0;
        for (ring, wr) in ring_weights(rho, layout) {
            if wr == 0.0 {
                continue;
            }
            if ring == 0 {
                h += wr * self.cell_heights[0];
                continue;
            }
            for (arc, wa) in arc_weights(phi) {
                h += wr * wa * self.cell_heights[ring_cell(ring, arc)];
            }
        }
        h
    }
}

fn ring_cell(ring: usize, arc: usize) -> usize {
    match ring {
        0 => 0,
        1 => 1 + arc,
        _ => 1 + ARC_COUNT + arc,
    }
}

fn ramp(x: f64, edge: f64, half: f64) -> f64 {
    ((x - (edge - half)) / (2.0 * half)).clamp(0.0, 1.0)
}

/// Ring membership weights (centre, inner, outer) with linear ramps across
/// each ring boundary.
fn ring_weights(rho: f64, layout: &CompassLayout) -> [(usize, f64); 3] {
    let t1 = ramp(rho, layout.r1_fraction, RADIAL_BLEND);
    let t2 = ramp(rho, layout.r2_fraction, RADIAL_BLEND);
    [(0, 1.0 - t1), (1, t1 - t2), (2, t2)]
}

/// Arc weights with linear ramps across arc boundaries.
fn arc_weights(phi: f64) -> [(usize, f64); 2] {
    let width = std::f64::consts::TAU / ARC_COUNT as f64;
    let arc = arc_of(phi);
    // signed offset from the arc centre, in (-width/2, width/2]
    let mut off = phi - arc as f64 * width;
    if off > std::f64::consts::PI {
        off -= std::f64::consts::TAU;
    }
    let (next, toward) = if off >= 0.0 {
        ((arc + 1) % ARC_COUNT, off)
    } else {
        ((arc + ARC_COUNT - 1) % ARC_COUNT, -off)
    };
    let w_next = ramp(toward, width / 2.0, ANGULAR_BLEND);
    [(arc, 1.0 - w_next), (next, w_next)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocalLesion {
    pub cells: Vec<usize>,
    /// Trabecular HU change per year inside the lesion cells.
    pub hu_delta_per_year: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgressionModel {
    pub kind: Class,
    /// Per-cell height change, mm/year.
    pub height_rate: [f64; CELL_COUNT],
    /// Diffuse trabecular change, HU/year.
    pub trabecular_rate: f64,
    pub focal_lesion: Option<FocalLesion>,
}

impl ProgressionModel {
    pub fn stationary(kind: Class) -> Self {
        ProgressionModel {
            kind,
            height_rate: [0.0; CELL_COUNT],
            trabecular_rate: 0.0,
            focal_lesion: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(lesion) = &self.focal_lesion {
            if self.kind != Class::Neoplastic {
                return Err(Error::Spec("focal lesions are only valid for neoplastic progression".into()));
            }
            if lesion.cells.iter().any(|&c| c >= CELL_COUNT) {
                return Err(Error::Spec(format!("lesion cells out of range: {:?}", lesion.cells)));
            }
        }
        Ok(())
    }
}

/// State of a vertebra `dt` years later. Heights saturate at
/// [`MIN_CELL_HEIGHT`].
pub fn advance(spec: &VertebraSpec, model: &ProgressionModel, dt: f64) -> VertebraSpec {
    assert!(dt >= 0.0, "dt must be non-negative, got {dt}");
    let mut next = spec.clone();
    if dt == 0.0 {
        return next;
    }
    for (h, rate) in next.cell_heights.iter_mut().zip(&model.height_rate) {
        *h = (*h + rate * dt).max(MIN_CELL_HEIGHT);
    }
    next.trabecular_hu += model.trabecular_rate * dt;
    if let Some(lesion) = &model.focal_lesion {
        for &c in &lesion.cells {
            next.lesion_hu[c] += lesion.hu_delta_per_year * dt;
        }
    }
    next
}

/// Voxels of one rendered vertebral body.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedBody {
    /// Linear voxel indices, ascending.
    pub indices: Vec<usize>,
    /// HU per voxel (noise included), not yet rounded.
    pub hu: Vec<f64>,
    /// Whether each voxel belongs to the cortical shell.
    pub cortical: Vec<bool>,
}

impl RenderedBody {
    /// Writes the body into a volume and label map.
    pub fn stamp(&self, volume: &mut Volume, labels: &mut LabelMap, label: u16) {
        for (k, &i) in self.indices.iter().enumerate() {
            volume.set(i, quantize_hu(self.hu[k]));
            labels.set(i, label);
        }
    }
}

pub(crate) fn quantize_hu(v: f64) -> i16 {
    v.round().clamp(HU_MIN as f64, HU_MAX as f64) as i16
}

/// Renders a vertebral body into `grid`. `frame.centroid` is the centre of
/// the body's mid-plane. Noise is drawn from `rng` in ascending voxel order.
pub fn render_vertebra(
    spec: &VertebraSpec,
    frame: &LocalFrame,
    grid: &Geometry,
    layout: &CompassLayout,
    rng: &mut impl Rng,
) -> Result<RenderedBody> {
    spec.validate()?;
    let (a, b) = spec.body_radii;
    let half_h = spec.max_height() / 2.0;

    // voxel-space bounding box of the local box [-a,a]x[-b,b]x[-h/2,h/2]
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &u in &[-a, a] {
        for &v in &[-b, b] {
            for &w in &[-half_h, half_h] {
                let p = frame.to_world([u, v, w]);
                for ax in 0..3 {
                    let c = (p[ax] - grid.origin[ax]) / grid.spacing[ax];
                    lo[ax] = lo[ax].min(c);
                    hi[ax] = hi[ax].max(c);
                }
            }
        }
    }
    let mut range = [(0usize, 0usize); 3];
    for ax in 0..3 {
        let l = (lo[ax] - 1e-9).ceil();
        let h = (hi[ax] + 1e-9).floor();
        if l < 0.0 || h > (grid.dims[ax] - 1) as f64 {
            return Err(Error::OutOfBounds(format!(
                "axis {ax}: voxel span [{:.2}, {:.2}] outside [0, {}]",
                lo[ax],
                hi[ax],
                grid.dims[ax] - 1
            )));
        }
        range[ax] = (l as usize, h as usize);
    }

    let mut voxels = Vec::new();
    let mut cells = Vec::new();
    for z in range[2].0..=range[2].1 {
        for y in range[1].0..=range[1].1 {
            for x in range[0].0..=range[0].1 {
                let [u, v, w] = frame.to_local(grid.world([x, y, z]));
                let rho = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
                if rho > 1.0 {
                    continue;
                }
                let phi = azimuth(u, v);
                let h = spec.height_at(rho, phi, layout);
                // half-open so an h mm column covers h / spacing voxel
                // centres; the shift keeps lattice ties off the boundary
                let w = w + BOUNDARY_EPS;
                if -h / 2.0 <= w && w < h / 2.0 {
                    voxels.push([x, y, z]);
                    cells.push(layout.cell(rho, phi));
                }
            }
        }
    }
    if voxels.is_empty() {
        return Err(Error::Spec("vertebra renders to no voxels".into()));
    }

    let sub = SubGrid::from_voxels(&voxels, 1).expect("non-empty");
    let dist = sub.squared_distance_to_background(grid.spacing);
    let t2 = spec.cortical_thickness * spec.cortical_thickness;

    let mut order: Vec<usize> = (0..voxels.len()).collect();
    order.sort_by_key(|&k| grid.index(voxels[k]));

    let noise = (spec.noise_sd > 0.0).then(|| Normal::new(0.0, spec.noise_sd).expect("finite sd"));
    let mut body = RenderedBody {
        indices: Vec::with_capacity(voxels.len()),
        hu: Vec::with_capacity(voxels.len()),
        cortical: Vec::with_capacity(voxels.len()),
    };
    for k in order {
        let v = voxels[k];
        let cortical = dist[sub.local_index(v)] <= t2;
        let mut hu = if cortical {
            spec.cortical_hu
        } else {
            spec.trabecular_hu + spec.lesion_hu[cells[k]]
        };
        if let Some(n) = &noise {
            hu += n.sample(rng);
        }
        body.indices.push(grid.index(v));
        body.hu.push(hu);
        body.cortical.push(cortical);
    }
    Ok(body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn advance_identity_and_arithmetic() {
        let spec = VertebraSpec::uniform(3, (15.0, 20.0), 20.0);
        let mut model = ProgressionModel::stationary(Class::Osteoporotic);
        model.height_rate = [-6.0; CELL_COUNT];
        assert_eq!(advance(&spec, &model, 0.0), spec);
        let half = advance(&spec, &model, 0.5);
        assert!(half.cell_heights.iter().all(|&h| h == 17.0));
    }

    #[test]
    fn advance_floors_heights() {
        let mut spec = VertebraSpec::uniform(3, (15.0, 20.0), 20.0);
        spec.cell_heights[4] = 2.0;
        let mut model = ProgressionModel::stationary(Class::Osteoporotic);
        model.height_rate = [-6.0; CELL_COUNT];
        let next = advance(&spec, &model, 1.0);
        assert_eq!(next.cell_heights[4], MIN_CELL_HEIGHT);
        assert_eq!(next.cell_heights[0], 14.0);
    }

    #[test]
    fn lesion_only_for_neoplastic() {
        let mut model = ProgressionModel::stationary(Class::Osteoporotic);
        model.focal_lesion = Some(FocalLesion {
            cells: vec![4],
            hu_delta_per_year: 10.0,
        });
        assert!(model.validate().is_err());
        model.kind = Class::Neoplastic;
        assert!(model.validate().is_ok());
        let spec = VertebraSpec::uniform(3, (15.0, 20.0), 20.0);
        assert_eq!(advance(&spec, &model, 2.0).lesion_hu[4], 20.0);
    }

    #[test]
    fn blend_weights_partition_unity() {
        let layout = CompassLayout::default();
        for i in 0..=100 {
            let rho = i as f64 / 100.0;
            let s: f64 = ring_weights(rho, &layout).iter().map(|w| w.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
            let phi = rho * std::f64::consts::TAU;
            let s: f64 = arc_weights(phi).iter().map(|w| w.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let mut spec = VertebraSpec::uniform(1, (15.0, 20.0), 20.0);
        spec.cell_heights[9] = 10.0;
        // plateau at the outer anterior cell centre
        assert_eq!(spec.height_at(0.85, 0.0, &layout), 10.0);
        // halfway across the anterior/right arc boundary the blend is even
        let edge = std::f64::consts::PI / 8.0;
        assert!((spec.height_at(0.85, edge, &layout) - 15.0).abs() < 1e-9);
    }

    #[test]
    fn body_outside_grid_is_rejected() {
        let g = Geometry::new([20, 20, 20], [1.0; 3], [0.0; 3]).unwrap();
        let spec = VertebraSpec::uniform(1, (15.0, 20.0), 20.0);
        let frame = LocalFrame::axis_aligned([10.0, 10.0, 10.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            render_vertebra(&spec, &frame, &g, &CompassLayout::default(), &mut rng),
            Err(Error::OutOfBounds(_))
        ));
    }
}
