//! Per-vertebra orientation frames.
//!
//! The superior axis is the principal axis of the body's voxel cloud that is
//! closest to world +z. The anterior axis comes from, in priority order, an
//! explicit hint, the direction from the spinal canal towards the body, or
//! world +y; it is projected orthogonal to the superior axis. The left axis
//! completes a right-handed frame: `lr = si × ap`.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::volume::{LabelMap, LabelRole};

pub const MIN_BODY_VOXELS: usize = 50;
const EIGEN_TIE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub centroid: [f64; 3],
    pub axis_si: [f64; 3],
    pub axis_ap: [f64; 3],
    pub axis_lr: [f64; 3],
}

impl LocalFrame {
    /// Builds a frame from a superior and an anterior axis, which must already
    /// be orthonormal to within 1e-9.
    pub fn new(centroid: [f64; 3], axis_si: [f64; 3], axis_ap: [f64; 3]) -> Result<Self> {
        let si = Vector3::from(axis_si);
        let ap = Vector3::from(axis_ap);
        if (si.norm() - 1.0).abs() > 1e-9 || (ap.norm() - 1.0).abs() > 1e-9 || si.dot(&ap).abs() > 1e-9 {
            return Err(Error::Degenerate(format!(
                "frame axes are not orthonormal: si={axis_si:?} ap={axis_ap:?}"
            )));
        }
        let lr = si.cross(&ap);
        Ok(LocalFrame {
            centroid,
            axis_si,
            axis_ap,
            axis_lr: lr.into(),
        })
    }

    /// World-aligned frame: superior +z, anterior +y.
    pub fn axis_aligned(centroid: [f64; 3]) -> Self {
        LocalFrame::new(centroid, [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]).expect("world axes are orthonormal")
    }

    /// Components of `p - centroid` along (ap, lr, si).
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [
            p[0] - self.centroid[0],
            p[1] - self.centroid[1],
            p[2] - self.centroid[2],
        ];
        [dot(d, self.axis_ap), dot(d, self.axis_lr), dot(d, self.axis_si)]
    }

    /// Inverse of [`LocalFrame::to_local`].
    pub fn to_world(&self, local: [f64; 3]) -> [f64; 3] {
        let mut p = self.centroid;
        for a in 0..3 {
            p[a] += local[0] * self.axis_ap[a] + local[1] * self.axis_lr[a] + local[2] * self.axis_si[a];
        }
        p
    }

    /// Largest deviation from orthonormality and right-handedness.
    pub fn orthonormality_error(&self) -> f64 {
        let si = Vector3::from(self.axis_si);
        let ap = Vector3::from(self.axis_ap);
        let lr = Vector3::from(self.axis_lr);
        let errs = [
            (si.norm() - 1.0).abs(),
            (ap.norm() - 1.0).abs(),
            (lr.norm() - 1.0).abs(),
            si.dot(&ap).abs(),
            si.dot(&lr).abs(),
            ap.dot(&lr).abs(),
            (si.cross(&ap) - lr).norm(),
        ];
        errs.into_iter().fold(0.0, f64::max)
    }
}

#[inline]
pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Extent of one voxel along a unit axis: `sqrt(sum (axis_i * spacing_i)^2)`.
/// Equals the spacing itself for grid-aligned axes.
pub fn axis_spacing(axis: [f64; 3], spacing: [f64; 3]) -> f64 {
    (0..3).map(|i| (axis[i] * spacing[i]).powi(2)).sum::<f64>().sqrt()
}

/// Computes the superior axis and centroid of a point cloud and resolves the
/// anterior axis. `canal` points are used only when `anterior_hint` is `None`.
pub fn frame_from_points(
    points: &[[f64; 3]],
    canal: Option<&[[f64; 3]]>,
    anterior_hint: Option<[f64; 3]>,
) -> Result<LocalFrame> {
    if points.len() < MIN_BODY_VOXELS {
        return Err(Error::Degenerate(format!(
            "{} points, need at least {MIN_BODY_VOXELS}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mut mean = Vector3::zeros();
    for p in points {
        mean += Vector3::from(*p);
    }
    mean /= n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = Vector3::from(*p) - mean;
        cov += d * d.transpose();
    }
    cov /= n;

    let eig = SymmetricEigen::new(cov);
    let max_eval = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min_eval = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if !(max_eval > 0.0) || min_eval <= 1e-9 * max_eval {
        return Err(Error::Degenerate(format!(
            "covariance rank < 3 (eigenvalues {:?})",
            eig.eigenvalues.as_slice()
        )));
    }

    let si = superior_axis(&eig);
    let centroid: [f64; 3] = mean.into();

    let anterior = match anterior_hint {
        Some(hint) => {
            let h = Vector3::from(hint);
            if h.norm() == 0.0 || (h.dot(&si) / h.norm()).abs() > 1f64.to_radians().cos() {
                return Err(Error::HintParallel);
            }
            h
        }
        None => canal
            .and_then(|c| canal_direction(points, c, mean, si))
            .unwrap_or_else(|| Vector3::new(0.0, 1.0, 0.0)),
    };
    let ap = anterior - si * anterior.dot(&si);
    if ap.norm() < 1e-9 {
        return Err(Error::HintParallel);
    }
    let ap = ap.normalize();
    let lr = si.cross(&ap);
    Ok(LocalFrame {
        centroid,
        axis_si: si.into(),
        axis_ap: ap.into(),
        axis_lr: lr.into(),
    })
}

fn superior_axis(eig: &SymmetricEigen<f64, nalgebra::U3>) -> Vector3<f64> {
    let z = Vector3::new(0.0, 0.0, 1.0);
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let best = (0..3)
        .max_by(|&a, &b| {
            let ca = eig.eigenvectors.column(a).dot(&z).abs();
            let cb = eig.eigenvectors.column(b).dot(&z).abs();
            ca.total_cmp(&cb).then(b.cmp(&a))
        })
        .expect("three eigenvectors");
    // Eigenvalues tied with the chosen one span a degenerate eigenspace; the
    // member of that space with the largest |z| is the projection of +z.
    let tied: Vec<usize> = (0..3)
        .filter(|&k| (eig.eigenvalues[k] - eig.eigenvalues[best]).abs() <= EIGEN_TIE * scale)
        .collect();
    let mut axis: Vector3<f64> = if tied.len() > 1 {
        let mut proj = Vector3::zeros();
        for &k in &tied {
            let e = eig.eigenvectors.column(k).into_owned();
            proj += e * e.dot(&z);
        }
        if proj.norm() > 1e-12 {
            proj.normalize()
        } else {
            eig.eigenvectors.column(best).into_owned()
        }
    } else {
        eig.eigenvectors.column(best).into_owned()
    };
    let flip = if axis.z != 0.0 {
        axis.z < 0.0
    } else {
        axis.iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0)
    };
    if flip {
        axis = -axis;
    }
    axis.normalize()
}

fn canal_direction(
    body: &[[f64; 3]],
    canal: &[[f64; 3]],
    body_centroid: Vector3<f64>,
    si: Vector3<f64>,
) -> Option<Vector3<f64>> {
    let (lo, hi) = body.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let t = (Vector3::from(*p) - body_centroid).dot(&si);
        (lo.min(t), hi.max(t))
    });
    let mut sum = Vector3::zeros();
    let mut count = 0usize;
    for q in canal {
        let q = Vector3::from(*q);
        let t = (q - body_centroid).dot(&si);
        if t >= lo && t <= hi {
            sum += q;
            count += 1;
        }
    }
    if count == 0 {
        return None;
    }
    let d = body_centroid - sum / count as f64;
    let d = d - si * d.dot(&si);
    (d.norm() > 1e-9).then_some(d)
}

/// Orientation frame of a labeled vertebra (world coordinates, mm).
///
/// Coordinates are accumulated relative to the label's bounding-box corner,
/// so translating the grid content by whole voxels only shifts the centroid.
pub fn vertebra_frame(lm: &LabelMap, label: u16, anterior_hint: Option<[f64; 3]>) -> Result<LocalFrame> {
    let voxels = lm.voxels_of(label);
    if voxels.is_empty() {
        return Err(Error::LabelNotFound(label));
    }
    if voxels.len() < MIN_BODY_VOXELS {
        return Err(Error::TooFewVoxels {
            label,
            count: voxels.len(),
            min: MIN_BODY_VOXELS,
        });
    }
    let g = lm.geometry();
    let lo = bbox_min(&voxels);
    let rel = |v: [usize; 3]| -> [f64; 3] {
        [
            (v[0] - lo[0]) as f64 * g.spacing[0],
            (v[1] - lo[1]) as f64 * g.spacing[1],
            (v[2] - lo[2]) as f64 * g.spacing[2],
        ]
    };
    let points: Vec<[f64; 3]> = voxels.iter().map(|&v| rel(v)).collect();
    let canal: Option<Vec<[f64; 3]>> = if anterior_hint.is_none() {
        lm.label_with_role(LabelRole::Canal).map(|c| {
            lm.voxels_of(c)
                .into_iter()
                .map(|v| {
                    [
                        (v[0] as f64 - lo[0] as f64) * g.spacing[0],
                        (v[1] as f64 - lo[1] as f64) * g.spacing[1],
                        (v[2] as f64 - lo[2] as f64) * g.spacing[2],
                    ]
                })
                .collect()
        })
    } else {
        None
    };
    let mut frame = frame_from_points(&points, canal.as_deref(), anterior_hint).map_err(|e| match e {
        Error::Degenerate(m) => Error::Degenerate(format!("label {label}: {m}")),
        other => other,
    })?;
    let base = g.world(lo);
    for a in 0..3 {
        frame.centroid[a] += base[a];
    }
    Ok(frame)
}

pub(crate) fn bbox_min(voxels: &[[usize; 3]]) -> [usize; 3] {
    voxels.iter().fold([usize::MAX; 3], |m, v| [m[0].min(v[0]), m[1].min(v[1]), m[2].min(v[2])])
}
