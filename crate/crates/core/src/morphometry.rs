//! Height compass morphometry.
//!
//! The vertebral body's axial footprint is split into 17 cells: a centre disc
//! plus an inner and an outer ring of eight arcs each. Arc 0 faces anterior
//! and arcs advance clockwise when viewed from superior (towards the
//! subject's right). Ring boundaries are fractions of the footprint's radius
//! measured in the direction of each column, so rings follow the body
//! outline rather than a fixed circle.
//!
//! Cell layout: 0 = centre, 1..=8 inner ring arcs 0..=7, 9..=16 outer ring.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::frame::{axis_spacing, bbox_min, dot, LocalFrame};
use crate::volume::LabelMap;

pub const CELL_COUNT: usize = 17;
pub const ARC_COUNT: usize = 8;
/// Angular resolution of the footprint boundary profile.
const RADIUS_BINS: usize = 72;
/// Columns (and cells) with fewer voxels / columns than this are unreliable.
pub const MIN_COLUMN_VOXELS: usize = 3;
pub const MIN_CELL_COLUMNS: usize = 3;

pub const ANTERIOR_ARCS: [usize; 3] = [7, 0, 1];
pub const RIGHT_ARCS: [usize; 3] = [1, 2, 3];
pub const POSTERIOR_ARCS: [usize; 3] = [3, 4, 5];
pub const LEFT_ARCS: [usize; 3] = [5, 6, 7];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompassLayout {
    pub r1_fraction: f64,
    pub r2_fraction: f64,
}

impl Default for CompassLayout {
    fn default() -> Self {
        CompassLayout {
            r1_fraction: 1.0 / 3.0,
            r2_fraction: 2.0 / 3.0,
        }
    }
}

impl CompassLayout {
    pub fn new(r1_fraction: f64, r2_fraction: f64) -> Result<Self> {
        if !(0.0 < r1_fraction && r1_fraction < r2_fraction && r2_fraction < 1.0) {
            return Err(Error::Spec(format!(
                "compass fractions must satisfy 0 < r1 < r2 < 1, got {r1_fraction}, {r2_fraction}"
            )));
        }
        Ok(CompassLayout {
            r1_fraction,
            r2_fraction,
        })
    }

    /// Cell index for a normalized radius and a compass azimuth (radians).
    pub fn cell(&self, rho: f64, azimuth: f64) -> usize {
        if rho < self.r1_fraction {
            0
        } else if rho < self.r2_fraction {
            1 + arc_of(azimuth)
        } else {
            1 + ARC_COUNT + arc_of(azimuth)
        }
    }
}

pub fn inner_cell(arc: usize) -> usize {
    1 + arc
}

pub fn outer_cell(arc: usize) -> usize {
    1 + ARC_COUNT + arc
}

/// Compass azimuth of an in-plane offset given by its anterior and left
/// components: 0 at anterior, increasing clockwise viewed from superior.
pub fn azimuth(ap: f64, lr: f64) -> f64 {
    let a = (-lr).atan2(ap);
    if a < 0.0 {
        a + TAU
    } else {
        a
    }
}

/// Arc index of an azimuth; arc 0 is centred on anterior.
pub fn arc_of(azimuth: f64) -> usize {
    let width = TAU / ARC_COUNT as f64;
    (((azimuth + width / 2.0) / width).floor() as usize) % ARC_COUNT
}

/// One axial column of the body: voxels sharing an in-plane bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    /// In-plane bin along (ap, lr).
    pub bin: (i64, i64),
    /// Bin centre along ap / lr (mm, relative to the body's bounding box).
    pub ap: f64,
    pub lr: f64,
    pub voxel_count: usize,
    /// Endplate-to-endplate extent including one slice-equivalent spacing.
    pub height: f64,
}

/// Projection of a vertebral body onto the plane orthogonal to its superior
/// axis.
#[derive(Debug, Clone)]
pub struct Footprint {
    pub columns: Vec<Column>,
    /// Mean column position (ap, lr).
    pub center: (f64, f64),
    /// Voxel centroid of the body projected onto (ap, lr).
    pub body_centroid: (f64, f64),
    /// In-plane bin sizes along ap / lr and the slice-equivalent spacing.
    pub bin_size: (f64, f64),
    pub slice_spacing: f64,
    radius_profile: Vec<f64>,
}

impl Footprint {
    /// Collects the columns of `label`. All positions are taken relative to
    /// the label's bounding-box corner.
    pub fn from_label(lm: &LabelMap, label: u16, frame: &LocalFrame) -> Result<Self> {
        let voxels = lm.voxels_of(label);
        if voxels.is_empty() {
            return Err(Error::LabelNotFound(label));
        }
        let g = lm.geometry();
        let lo = bbox_min(&voxels);
        let du = axis_spacing(frame.axis_ap, g.spacing);
        let dv = axis_spacing(frame.axis_lr, g.spacing);
        let dw = axis_spacing(frame.axis_si, g.spacing);

        // bin -> (min si, max si, count)
        let mut bins: BTreeMap<(i64, i64), (f64, f64, usize)> = BTreeMap::new();
        let (mut su, mut sv) = (0.0, 0.0);
        for v in &voxels {
            let p = [
                (v[0] - lo[0]) as f64 * g.spacing[0],
                (v[1] - lo[1]) as f64 * g.spacing[1],
                (v[2] - lo[2]) as f64 * g.spacing[2],
            ];
            let u = dot(p, frame.axis_ap);
            let w = dot(p, frame.axis_lr);
            let t = dot(p, frame.axis_si);
            su += u;
            sv += w;
            let key = ((u / du).round() as i64, (w / dv).round() as i64);
            let e = bins.entry(key).or_insert((f64::INFINITY, f64::NEG_INFINITY, 0));
            e.0 = e.0.min(t);
            e.1 = e.1.max(t);
            e.2 += 1;
        }
        let n = voxels.len() as f64;
        let columns: Vec<Column> = bins
            .into_iter()
            .map(|(bin, (lo_t, hi_t, count))| Column {
                bin,
                ap: bin.0 as f64 * du,
                lr: bin.1 as f64 * dv,
                voxel_count: count,
                height: hi_t - lo_t + dw,
            })
            .collect();
        Ok(Footprint::from_columns(columns, (su / n, sv / n), (du, dv), dw))
    }

    /// Builds a footprint from prepared columns.
    pub fn from_columns(columns: Vec<Column>, body_centroid: (f64, f64), bin_size: (f64, f64), slice_spacing: f64) -> Self {
        let m = columns.len().max(1) as f64;
        let center = (
            columns.iter().map(|c| c.ap).sum::<f64>() / m,
            columns.iter().map(|c| c.lr).sum::<f64>() / m,
        );
        let mut radius_profile = vec![0.0f64; RADIUS_BINS];
        for c in &columns {
            let (r, phi) = polar(c.ap - center.0, c.lr - center.1);
            let b = radius_bin(phi);
            radius_profile[b] = radius_profile[b].max(r);
        }
        Footprint {
            columns,
            center,
            body_centroid,
            bin_size,
            slice_spacing,
            radius_profile,
        }
    }

    /// Footprint radius in the direction of `azimuth`.
    pub fn radius_at(&self, azimuth: f64) -> f64 {
        self.radius_profile[radius_bin(azimuth)]
    }

    /// Radius normalized by the directional footprint radius, and azimuth,
    /// for an in-plane position.
    pub fn normalized_polar(&self, ap: f64, lr: f64) -> (f64, f64) {
        let (r, phi) = polar(ap - self.center.0, lr - self.center.1);
        if r == 0.0 {
            return (0.0, phi);
        }
        let radius = self.radius_at(phi);
        let rho = if radius > 0.0 { r / radius } else { f64::INFINITY };
        (rho, phi)
    }

    /// Compass cell of an arbitrary in-plane position.
    pub fn cell_of(&self, ap: f64, lr: f64, layout: &CompassLayout) -> usize {
        let (rho, phi) = self.normalized_polar(ap, lr);
        layout.cell(rho, phi)
    }
}

fn polar(ap: f64, lr: f64) -> (f64, f64) {
    ((ap * ap + lr * lr).sqrt(), azimuth(ap, lr))
}

fn radius_bin(azimuth: f64) -> usize {
    ((azimuth / TAU * RADIUS_BINS as f64).floor() as usize).min(RADIUS_BINS - 1)
}

/// Assigns every footprint column to exactly one compass cell.
pub fn assign_cells(footprint: &Footprint, layout: &CompassLayout) -> Result<Vec<usize>> {
    if footprint.columns.is_empty() {
        return Err(Error::Degenerate("empty footprint".into()));
    }
    Ok(footprint
        .columns
        .iter()
        .map(|c| footprint.cell_of(c.ap, c.lr, layout))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellHeights {
    /// Median column height per cell; `None` marks a missing cell.
    pub heights: [Option<f64>; CELL_COUNT],
    /// Footprint columns assigned to each cell.
    pub column_counts: [usize; CELL_COUNT],
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

pub fn cell_heights_of(footprint: &Footprint, layout: &CompassLayout, label: u16) -> Result<CellHeights> {
    let cells = assign_cells(footprint, layout)?;
    let mut per_cell: Vec<Vec<f64>> = vec![Vec::new(); CELL_COUNT];
    let mut column_counts = [0usize; CELL_COUNT];
    for (col, &cell) in footprint.columns.iter().zip(&cells) {
        column_counts[cell] += 1;
        if col.voxel_count >= MIN_COLUMN_VOXELS {
            per_cell[cell].push(col.height);
        }
    }
    let mut heights = [None; CELL_COUNT];
    for (cell, values) in per_cell.iter_mut().enumerate() {
        if column_counts[cell] >= MIN_CELL_COLUMNS && values.len() >= MIN_CELL_COLUMNS {
            heights[cell] = median(values);
        }
    }
    if heights.iter().all(Option::is_none) {
        return Err(Error::AllCellsMissing(label));
    }
    Ok(CellHeights {
        heights,
        column_counts,
    })
}

/// Per-cell endplate-to-endplate heights (mm) of a labeled vertebra.
pub fn cell_heights(lm: &LabelMap, label: u16, frame: &LocalFrame, layout: &CompassLayout) -> Result<CellHeights> {
    let fp = Footprint::from_label(lm, label, frame)?;
    cell_heights_of(&fp, layout, label)
}

/// The height features of one vertebra. Missing values are `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeightFeatures {
    pub h_c: Option<f64>,
    pub h_a: Option<f64>,
    pub h_p: Option<f64>,
    pub h_l: Option<f64>,
    pub h_r: Option<f64>,
    pub h_avg: Option<f64>,
    pub h_avg_5: Option<f64>,
    pub contrast_p: Option<f64>,
    pub contrast_n: Option<f64>,
    pub contrast_a: Option<f64>,
    pub vid: u32,
    pub anterior: Option<f64>,
    pub center: Option<f64>,
    pub posterior: Option<f64>,
    pub manual_mean: Option<f64>,
    pub mean_h: Option<f64>,
}

fn mean_present(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn region_mean(ch: &CellHeights, arcs: &[usize; 3]) -> Option<f64> {
    mean_present(
        arcs.iter()
            .flat_map(|&a| [ch.heights[inner_cell(a)], ch.heights[outer_cell(a)]]),
    )
}

/// Regional summaries: (h_c, h_a, h_p, h_l, h_r, h_avg, h_avg_5). The
/// anterior/right/posterior/left regions share their corner arcs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionalSummaries {
    pub h_c: Option<f64>,
    pub h_a: Option<f64>,
    pub h_p: Option<f64>,
    pub h_l: Option<f64>,
    pub h_r: Option<f64>,
    pub h_avg: Option<f64>,
    pub h_avg_5: Option<f64>,
}

pub fn regional_summaries(ch: &CellHeights) -> Result<RegionalSummaries> {
    if ch.heights.iter().all(Option::is_none) {
        return Err(Error::Spec("regional summaries need at least one cell".into()));
    }
    let h_c = ch.heights[0];
    let h_a = region_mean(ch, &ANTERIOR_ARCS);
    let h_p = region_mean(ch, &POSTERIOR_ARCS);
    let h_l = region_mean(ch, &LEFT_ARCS);
    let h_r = region_mean(ch, &RIGHT_ARCS);
    Ok(RegionalSummaries {
        h_c,
        h_a,
        h_p,
        h_l,
        h_r,
        h_avg: mean_present(ch.heights.iter().copied()),
        h_avg_5: mean_present([h_c, h_a, h_p, h_l, h_r]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SagittalHeights {
    pub anterior: Option<f64>,
    pub center: Option<f64>,
    pub posterior: Option<f64>,
    pub manual_mean: Option<f64>,
    pub mean_h: Option<f64>,
}

const SAGITTAL_EDGE_FRACTION: f64 = 0.2;

pub fn sagittal_heights_of(fp: &Footprint, label: u16) -> Result<SagittalHeights> {
    let (_, dv) = fp.bin_size;
    let slab: Vec<&Column> = fp
        .columns
        .iter()
        .filter(|c| (c.lr - fp.body_centroid.1).abs() <= dv * (1.0 + 1e-9))
        .collect();
    if slab.is_empty() {
        return Err(Error::EmptySagittal(label));
    }
    let (lo, hi) = slab
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c.ap), hi.max(c.ap)));
    let extent = hi - lo;
    let mid = 0.5 * (lo + hi);
    let edge = SAGITTAL_EDGE_FRACTION * extent;
    let valid = |c: &&&Column| c.voxel_count >= MIN_COLUMN_VOXELS;
    let zone_mean = |keep: &dyn Fn(f64) -> bool| {
        mean_present(slab.iter().filter(valid).filter(|c| keep(c.ap)).map(|c| Some(c.height)))
    };
    let anterior = zone_mean(&|u| u >= hi - edge);
    let posterior = zone_mean(&|u| u <= lo + edge);
    let center = zone_mean(&|u| (u - mid).abs() <= 0.5 * edge);
    let mean_h = zone_mean(&|_| true);
    if mean_h.is_none() {
        return Err(Error::EmptySagittal(label));
    }
    let manual_mean = match (anterior, center, posterior) {
        (Some(a), Some(c), Some(p)) => Some((a + c + p) / 3.0),
        _ => None,
    };
    Ok(SagittalHeights {
        anterior,
        center,
        posterior,
        manual_mean,
        mean_h,
    })
}

/// Mid-sagittal heights: columns within one in-plane voxel of the plane
/// through the body centroid with normal `axis_lr`.
pub fn sagittal_heights(lm: &LabelMap, label: u16, frame: &LocalFrame) -> Result<SagittalHeights> {
    let fp = Footprint::from_label(lm, label, frame)?;
    sagittal_heights_of(&fp, label)
}

/// All single-vertebra height features; contrasts are left unset because
/// they depend on the neighbouring vertebrae (see [`contrast_features`]).
pub fn height_features(lm: &LabelMap, label: u16, frame: &LocalFrame, layout: &CompassLayout) -> Result<HeightFeatures> {
    let vid = lm.level_of(label).ok_or(Error::LabelNotFound(label))?;
    let fp = Footprint::from_label(lm, label, frame)?;
    let ch = cell_heights_of(&fp, layout, label)?;
    let r = regional_summaries(&ch)?;
    let s = sagittal_heights_of(&fp, label)?;
    Ok(HeightFeatures {
        h_c: r.h_c,
        h_a: r.h_a,
        h_p: r.h_p,
        h_l: r.h_l,
        h_r: r.h_r,
        h_avg: r.h_avg,
        h_avg_5: r.h_avg_5,
        contrast_p: None,
        contrast_n: None,
        contrast_a: None,
        vid,
        anterior: s.anterior,
        center: s.center,
        posterior: s.posterior,
        manual_mean: s.manual_mean,
        mean_h: s.mean_h,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Contrasts {
    pub p: Option<f64>,
    pub n: Option<f64>,
    pub a: Option<f64>,
}

/// Relative height against the adjacent levels within one study.
///
/// `vertebrae` holds (level, h_avg). The superior neighbour is level − 1 and
/// the inferior neighbour level + 1; a missing or zero-height neighbour
/// leaves that ratio missing and `contrastA` uses whichever neighbour remains.
pub fn contrast_features(vertebrae: &[(u32, Option<f64>)]) -> Vec<Contrasts> {
    let by_level: BTreeMap<u32, Option<f64>> = vertebrae.iter().copied().collect();
    let usable = |level: Option<u32>| -> Option<f64> {
        level
            .and_then(|l| by_level.get(&l).copied().flatten())
            .filter(|h| *h > 0.0)
    };
    vertebrae
        .iter()
        .map(|&(level, h)| {
            let Some(h) = h else {
                return Contrasts::default();
            };
            let sup = usable(level.checked_sub(1));
            let inf = usable(level.checked_add(1));
            let a = match (sup, inf) {
                (Some(s), Some(i)) => Some(2.0 * h / (s + i)),
                (Some(s), None) => Some(h / s),
                (None, Some(i)) => Some(h / i),
                (None, None) => None,
            };
            Contrasts {
                p: sup.map(|s| h / s),
                n: inf.map(|i| h / i),
                a,
            }
        })
        .collect()
}

/// Angle (radians) from anterior of the centre of `arc`.
pub fn arc_center(arc: usize) -> f64 {
    arc as f64 * TAU / ARC_COUNT as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc_footprint(radius: f64) -> Footprint {
        let r = radius.ceil() as i64;
        let mut columns = Vec::new();
        for i in -r..=r {
            for j in -r..=r {
                let (u, v) = (i as f64, j as f64);
                if u * u + v * v <= radius * radius {
                    columns.push(Column {
                        bin: (i, j),
                        ap: u,
                        lr: v,
                        voxel_count: 10,
                        height: 20.0,
                    });
                }
            }
        }
        Footprint::from_columns(columns, (0.0, 0.0), (1.0, 1.0), 1.0)
    }

    #[test]
    fn azimuth_runs_clockwise_from_anterior() {
        assert_eq!(arc_of(azimuth(1.0, 0.0)), 0);
        // subject right is -lr
        assert_eq!(arc_of(azimuth(0.0, -1.0)), 2);
        assert_eq!(arc_of(azimuth(-1.0, 0.0)), 4);
        assert_eq!(arc_of(azimuth(0.0, 1.0)), 6);
        assert_eq!(arc_of(azimuth(1.0, 0.01)), 0);
        assert_eq!(arc_of(azimuth(1.0, -0.01)), 0);
    }

    #[test]
    fn centre_and_outer_anterior_points() {
        let fp = disc_footprint(20.0);
        let layout = CompassLayout::default();
        assert_eq!(fp.cell_of(fp.center.0, fp.center.1, &layout), 0);
        let r = fp.radius_at(0.0);
        assert_eq!(fp.cell_of(fp.center.0 + 0.9 * r, fp.center.1, &layout), 9);
    }

    #[test]
    fn ring_areas_match_annulus_sectors() {
        let fp = disc_footprint(30.0);
        let layout = CompassLayout::default();
        let cells = assign_cells(&fp, &layout).unwrap();
        let mut counts = [0usize; CELL_COUNT];
        for c in cells {
            counts[c] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), fp.columns.len());
        // expected share of the disc area per annulus sector
        let total = fp.columns.len() as f64;
        let sector = |a: f64, b: f64| (b * b - a * a) * total / ARC_COUNT as f64;
        for arc in 0..ARC_COUNT {
            let inner = sector(1.0 / 3.0, 2.0 / 3.0);
            let outer = sector(2.0 / 3.0, 1.0);
            let ci = counts[inner_cell(arc)] as f64;
            let co = counts[outer_cell(arc)] as f64;
            assert!((ci - inner).abs() / inner < 0.05, "arc {arc}: inner {ci} vs {inner}");
            assert!((co - outer).abs() / outer < 0.05, "arc {arc}: outer {co} vs {outer}");
        }
    }

    #[test]
    fn constant_field_summaries() {
        let ch = CellHeights {
            heights: [Some(20.0); CELL_COUNT],
            column_counts: [5; CELL_COUNT],
        };
        let r = regional_summaries(&ch).unwrap();
        for v in [r.h_c, r.h_a, r.h_p, r.h_l, r.h_r, r.h_avg, r.h_avg_5] {
            assert_eq!(v, Some(20.0));
        }
    }

    #[test]
    fn only_centre_present() {
        let mut heights = [None; CELL_COUNT];
        heights[0] = Some(14.0);
        let ch = CellHeights {
            heights,
            column_counts: [0; CELL_COUNT],
        };
        let r = regional_summaries(&ch).unwrap();
        assert_eq!(r.h_c, Some(14.0));
        assert_eq!((r.h_a, r.h_p, r.h_l, r.h_r), (None, None, None, None));
        assert_eq!(r.h_avg, Some(14.0));
        assert_eq!(r.h_avg_5, Some(14.0));
    }

    #[test]
    fn contrasts_by_level() {
        let c = contrast_features(&[(3, Some(20.0)), (4, Some(20.0)), (5, Some(20.0))]);
        assert_eq!(c[1], Contrasts { p: Some(1.0), n: Some(1.0), a: Some(1.0) });

        let c = contrast_features(&[(3, Some(20.0)), (4, Some(10.0)), (5, Some(20.0))]);
        assert_eq!(c[1], Contrasts { p: Some(0.5), n: Some(0.5), a: Some(0.5) });

        // topmost: no superior neighbour
        assert_eq!(c[0].p, None);
        assert_eq!(c[0].a, c[0].n);
        assert_eq!(c[0].n, Some(2.0));
    }

    #[test]
    fn zero_height_neighbour_is_not_divided_by() {
        let c = contrast_features(&[(1, Some(0.0)), (2, Some(10.0))]);
        assert_eq!(c[1].p, None);
        assert_eq!(c[1].a, None);
    }

    #[test]
    fn layout_validation() {
        assert!(CompassLayout::new(0.5, 0.4).is_err());
        assert!(CompassLayout::new(0.0, 0.4).is_err());
        assert!(CompassLayout::new(0.3, 0.6).is_ok());
    }
}
