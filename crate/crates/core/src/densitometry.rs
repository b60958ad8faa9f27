//! Bone density of a vertebral body: mean HU over the whole body, mean HU
//! over the trabecular core (ball erosion, anterior half), and a two-point
//! calibration against muscle and fat reference regions
//! (fat -> 0, muscle -> 100).

use crate::error::{Error, Result};
use crate::frame::{bbox_min, dot, LocalFrame, MIN_BODY_VOXELS};
use crate::morphology::SubGrid;
use crate::volume::{Geometry, LabelMap, LabelRole, Volume};

pub const DEFAULT_EROSION_RADIUS_MM: f64 = 3.0;

/// Anything that yields an HU value per voxel of a grid.
pub trait HuSource {
    fn geometry(&self) -> &Geometry;
    fn hu(&self, index: usize) -> f64;
}

impl HuSource for Volume {
    fn geometry(&self) -> &Geometry {
        Volume::geometry(self)
    }

    fn hu(&self, index: usize) -> f64 {
        self.data()[index] as f64
    }
}

/// Linear rescale `slope * hu + intercept` of another source, as with CT
/// rescale slope/intercept tags.
#[derive(Debug, Clone, Copy)]
pub struct Rescaled<'a, S> {
    pub source: &'a S,
    pub slope: f64,
    pub intercept: f64,
}

impl<S: HuSource> HuSource for Rescaled<'_, S> {
    fn geometry(&self) -> &Geometry {
        self.source.geometry()
    }

    fn hu(&self, index: usize) -> f64 {
        self.slope * self.source.hu(index) + self.intercept
    }
}

fn mean_over(source: &impl HuSource, indices: &[usize]) -> f64 {
    indices.iter().map(|&i| source.hu(i)).sum::<f64>() / indices.len() as f64
}

fn check_grid(source: &impl HuSource, lm: &LabelMap) -> Result<()> {
    if source.geometry() != lm.geometry() {
        return Err(Error::Geometry("volume and label map grids differ".into()));
    }
    Ok(())
}

/// Mean HU over every voxel of `label`.
pub fn mean_density(vol: &impl HuSource, lm: &LabelMap, label: u16) -> Result<f64> {
    check_grid(vol, lm)?;
    let idx = lm.indices_of(label);
    if idx.is_empty() {
        return Err(Error::LabelNotFound(label));
    }
    if idx.len() < MIN_BODY_VOXELS {
        return Err(Error::TooFewVoxels {
            label,
            count: idx.len(),
            min: MIN_BODY_VOXELS,
        });
    }
    Ok(mean_over(vol, &idx))
}

/// Trabecular core of a vertebral body: voxels farther than
/// `erosion_radius_mm` from any non-body voxel, restricted to the anterior
/// half-space through the body centroid. Returns sorted voxel indices.
pub fn trabecular_region(lm: &LabelMap, label: u16, frame: &LocalFrame, erosion_radius_mm: f64) -> Result<Vec<usize>> {
    if !(erosion_radius_mm >= 0.0) {
        return Err(Error::Spec(format!("erosion radius must be >= 0, got {erosion_radius_mm}")));
    }
    let voxels = lm.voxels_of(label);
    if voxels.is_empty() {
        return Err(Error::LabelNotFound(label));
    }
    let g = lm.geometry();
    let lo = bbox_min(&voxels);
    let rel = |v: &[usize; 3]| -> [f64; 3] {
        [
            (v[0] - lo[0]) as f64 * g.spacing[0],
            (v[1] - lo[1]) as f64 * g.spacing[1],
            (v[2] - lo[2]) as f64 * g.spacing[2],
        ]
    };
    let n = voxels.len() as f64;
    let centroid_ap = voxels.iter().map(|v| dot(rel(v), frame.axis_ap)).sum::<f64>() / n;

    let grid = SubGrid::from_voxels(&voxels, 1).expect("non-empty");
    let dist = grid.squared_distance_to_background(g.spacing);
    let r2 = erosion_radius_mm * erosion_radius_mm;

    let mut mask: Vec<usize> = voxels
        .iter()
        .filter(|v| dist[grid.local_index(**v)] > r2)
        .filter(|v| dot(rel(v), frame.axis_ap) - centroid_ap > 0.0)
        .map(|&v| g.index(v))
        .collect();
    if mask.is_empty() {
        return Err(Error::ErosionEmpty {
            label,
            radius_mm: erosion_radius_mm,
        });
    }
    mask.sort_unstable();
    Ok(mask)
}

/// Two-point calibration: fat maps to 0, muscle to 100.
pub fn normalize(raw: f64, muscle_hu: f64, fat_hu: f64) -> Result<f64> {
    if !(muscle_hu > fat_hu) {
        return Err(Error::Normalization {
            muscle: muscle_hu,
            fat: fat_hu,
        });
    }
    Ok(100.0 * (raw - fat_hu) / (muscle_hu - fat_hu))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityFeatures {
    /// Normalized whole-body (cortical-inclusive) density.
    pub mean_den: f64,
    /// Normalized trabecular density.
    pub mean_trab: f64,
    pub raw_mean_den: f64,
    pub raw_mean_trab: f64,
    pub muscle_hu: f64,
    pub fat_hu: f64,
}

fn reference_mean(vol: &impl HuSource, lm: &LabelMap, role: LabelRole, name: &'static str) -> Result<f64> {
    let label = lm.label_with_role(role).ok_or(Error::MissingReference(name))?;
    let idx = lm.indices_of(label);
    if idx.is_empty() {
        return Err(Error::MissingReference(name));
    }
    Ok(mean_over(vol, &idx))
}

pub fn density_features(
    vol: &impl HuSource,
    lm: &LabelMap,
    label: u16,
    frame: &LocalFrame,
    erosion_radius_mm: f64,
) -> Result<DensityFeatures> {
    check_grid(vol, lm)?;
    let muscle_hu = reference_mean(vol, lm, LabelRole::MuscleRef, "MUSCLE_REF")?;
    let fat_hu = reference_mean(vol, lm, LabelRole::FatRef, "FAT_REF")?;
    let raw_mean_den = mean_density(vol, lm, label)?;
    let trab = trabecular_region(lm, label, frame, erosion_radius_mm)?;
    let raw_mean_trab = mean_over(vol, &trab);
    Ok(DensityFeatures {
        mean_den: normalize(raw_mean_den, muscle_hu, fat_hu)?,
        mean_trab: normalize(raw_mean_trab, muscle_hu, fat_hu)?,
        raw_mean_den,
        raw_mean_trab,
        muscle_hu,
        fat_hu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn normalization_anchors() {
        assert_eq!(normalize(-100.0, 50.0, -100.0).unwrap(), 0.0);
        assert_eq!(normalize(50.0, 50.0, -100.0).unwrap(), 100.0);
        assert!((normalize(150.0, 50.0, -100.0).unwrap() - 166.666_666_666_666_66).abs() < 1e-9);
        assert!(matches!(normalize(1.0, 10.0, 10.0), Err(Error::Normalization { .. })));
    }

    fn box_map(n: usize, body: ([usize; 3], [usize; 3])) -> (Volume, LabelMap) {
        let g = Geometry::new([n, n, n], [1.0; 3], [0.0; 3]).unwrap();
        let mut labels = vec![0u16; g.len()];
        let (lo, hi) = body;
        for z in lo[2]..hi[2] {
            for y in lo[1]..hi[1] {
                for x in lo[0]..hi[0] {
                    labels[g.index([x, y, z])] = 1;
                }
            }
        }
        let lm = LabelMap::new(g, labels, BTreeMap::from([(1, LabelRole::Vertebra { level: 1 })])).unwrap();
        (Volume::filled(g, 150).unwrap(), lm)
    }

    #[test]
    fn uniform_body_mean() {
        let (vol, lm) = box_map(12, ([2, 2, 2], [10, 10, 10]));
        assert_eq!(mean_density(&vol, &lm, 1).unwrap(), 150.0);
        assert!(matches!(mean_density(&vol, &lm, 9), Err(Error::LabelNotFound(9))));
    }

    #[test]
    fn zero_radius_keeps_exact_anterior_half() {
        let (_, lm) = box_map(12, ([2, 2, 2], [10, 10, 10]));
        let frame = LocalFrame::axis_aligned([0.0; 3]);
        let mask = trabecular_region(&lm, 1, &frame, 0.0).unwrap();
        // centroid y = 5.5, anterior half is y in 6..10
        assert_eq!(mask.len(), 8 * 4 * 8);
        let g = lm.geometry();
        assert!(mask.iter().all(|&i| g.coord(i)[1] >= 6));
    }

    #[test]
    fn oversized_erosion_is_an_error() {
        let (_, lm) = box_map(12, ([2, 2, 2], [10, 10, 10]));
        let frame = LocalFrame::axis_aligned([0.0; 3]);
        assert!(matches!(
            trabecular_region(&lm, 1, &frame, 4.0),
            Err(Error::ErosionEmpty { .. })
        ));
        assert!(trabecular_region(&lm, 1, &frame, 3.0).is_ok());
    }

    #[test]
    fn missing_reference_is_named() {
        let (vol, lm) = box_map(12, ([2, 2, 2], [10, 10, 10]));
        let frame = LocalFrame::axis_aligned([0.0; 3]);
        let err = density_features(&vol, &lm, 1, &frame, 0.0).unwrap_err();
        assert!(err.to_string().contains("MUSCLE_REF"));
    }
}
