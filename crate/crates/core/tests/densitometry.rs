mod common;

use std::collections::BTreeSet;

use common::{scene, uniform, Scene, FAT, MUSCLE};
use fracture_core::densitometry::{density_features, mean_density, normalize, trabecular_region, Rescaled};
use fracture_core::frame::vertebra_frame;
use fracture_core::{Error, LabelMap, LabelRole};

/// World y of the body's voxel centroid.
fn centroid_y(s: &Scene) -> f64 {
    let g = s.labels.geometry();
    let idx = &s.bodies[0].indices;
    idx.iter().map(|&i| g.world(g.coord(i))[1]).sum::<f64>() / idx.len() as f64
}

fn shelled() -> Scene {
    let mut spec = uniform(1, 20.0);
    spec.cortical_thickness = 3.0;
    scene(&[spec], [1.0, 1.0, 1.0])
}

#[test]
fn uniform_body_mean_is_its_value() {
    let mut spec = uniform(1, 20.0);
    spec.cortical_hu = 150.0;
    let s = scene(&[spec], [1.0, 1.0, 1.0]);
    assert_eq!(mean_density(&s.volume, &s.labels, s.ids[0]).unwrap(), 150.0);
}

#[test]
fn shelled_mean_matches_voxel_count() {
    let s = shelled();
    let body = &s.bodies[0];
    let cortical = body.cortical.iter().filter(|&&c| c).count() as f64;
    let n = body.indices.len() as f64;
    let expected = (400.0 * cortical + 150.0 * (n - cortical)) / n;
    let got = mean_density(&s.volume, &s.labels, s.ids[0]).unwrap();
    assert!(got > 150.0 && got < 400.0);
    assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
}

#[test]
fn empty_label_is_an_error() {
    let s = shelled();
    assert!(matches!(mean_density(&s.volume, &s.labels, 9), Err(Error::LabelNotFound(9))));
}

#[test]
fn trabecular_mask_excludes_shell_and_posterior_half() {
    let s = shelled();
    let frame = vertebra_frame(&s.labels, s.ids[0], Some([0.0, 1.0, 0.0])).unwrap();
    let mask = trabecular_region(&s.labels, s.ids[0], &frame, 3.0).unwrap();
    assert!(!mask.is_empty());
    let body: BTreeSet<usize> = s.bodies[0].indices.iter().copied().collect();
    let g = s.labels.geometry();
    let cy = centroid_y(&s);
    for &i in &mask {
        assert!(body.contains(&i));
        assert_eq!(s.volume.data()[i], 150, "cortical voxel {i} in mask");
        assert!(g.world(g.coord(i))[1] > cy);
    }
}

#[test]
fn zero_radius_is_the_anterior_half() {
    let s = shelled();
    let frame = vertebra_frame(&s.labels, s.ids[0], Some([0.0, 1.0, 0.0])).unwrap();
    let mask = trabecular_region(&s.labels, s.ids[0], &frame, 0.0).unwrap();
    let g = s.labels.geometry();
    let cy = centroid_y(&s);
    let expected: Vec<usize> = s.bodies[0]
        .indices
        .iter()
        .copied()
        .filter(|&i| g.world(g.coord(i))[1] > cy)
        .collect();
    assert_eq!(mask, expected);
}

#[test]
fn oversized_radius_is_an_error() {
    let s = shelled();
    let frame = vertebra_frame(&s.labels, s.ids[0], None).unwrap();
    assert!(trabecular_region(&s.labels, s.ids[0], &frame, 12.0).is_err());
}

#[test]
fn normalization_examples() {
    assert_eq!(normalize(-100.0, 50.0, -100.0).unwrap(), 0.0);
    assert_eq!(normalize(50.0, 50.0, -100.0).unwrap(), 100.0);
    assert!((normalize(150.0, 50.0, -100.0).unwrap() - 100.0 * 250.0 / 150.0).abs() < 1e-12);
}

#[test]
fn noise_free_trabecular_density() {
    let s = shelled();
    let frame = vertebra_frame(&s.labels, s.ids[0], None).unwrap();
    let d = density_features(&s.volume, &s.labels, s.ids[0], &frame, 3.0).unwrap();
    assert!((d.mean_trab - 166.67).abs() <= 0.5, "{}", d.mean_trab);
    assert_eq!((d.muscle_hu, d.fat_hu), (50.0, -100.0));
}

#[test]
fn affine_rescaling_leaves_normalized_density_unchanged() {
    let s = shelled();
    let frame = vertebra_frame(&s.labels, s.ids[0], None).unwrap();
    let base = density_features(&s.volume, &s.labels, s.ids[0], &frame, 3.0).unwrap();
    for slope in [0.5, 2.0] {
        for intercept in [-50.0, 100.0] {
            let r = Rescaled {
                source: &s.volume,
                slope,
                intercept,
            };
            let d = density_features(&r, &s.labels, s.ids[0], &frame, 3.0).unwrap();
            assert!((d.mean_den - base.mean_den).abs() < 1e-9);
            assert!((d.mean_trab - base.mean_trab).abs() < 1e-9);
        }
    }
    let shifted = s.volume.map_hu(|v| v as f64 + 50.0);
    let d = density_features(&shifted, &s.labels, s.ids[0], &frame, 3.0).unwrap();
    assert!((d.mean_den - base.mean_den).abs() < 1e-9);
    assert!((d.mean_trab - base.mean_trab).abs() < 1e-9);
}

#[test]
fn raising_trabecular_voxels_raises_raw_mean_by_delta() {
    let s = shelled();
    let frame = vertebra_frame(&s.labels, s.ids[0], None).unwrap();
    let base = density_features(&s.volume, &s.labels, s.ids[0], &frame, 3.0).unwrap();
    let mask = trabecular_region(&s.labels, s.ids[0], &frame, 3.0).unwrap();
    let mut raised = s.volume.clone();
    for &i in &mask {
        raised.set(i, s.volume.data()[i] + 7);
    }
    let d = density_features(&raised, &s.labels, s.ids[0], &frame, 3.0).unwrap();
    assert!((d.raw_mean_trab - base.raw_mean_trab - 7.0).abs() < 1e-9);
}

#[test]
fn missing_fat_reference_is_named() {
    let s = shelled();
    let g = *s.labels.geometry();
    let mut labels: Vec<u16> = s.labels.labels().to_vec();
    for l in &mut labels {
        if *l == FAT {
            *l = 0;
        }
    }
    let mut legend = s.labels.legend().clone();
    legend.remove(&FAT);
    let lm = LabelMap::new(g, labels, legend).unwrap();
    assert_eq!(lm.role(MUSCLE), Some(LabelRole::MuscleRef));
    let frame = vertebra_frame(&lm, s.ids[0], None).unwrap();
    let err = density_features(&s.volume, &lm, s.ids[0], &frame, 3.0).unwrap_err();
    assert!(err.to_string().contains("FAT_REF"), "{err}");
}

