mod common;

use common::{biconcave, scene, scene_at, uniform, wedge, Scene};
use fracture_core::frame::vertebra_frame;
use fracture_core::morphometry::{
    cell_heights, contrast_features, height_features, regional_summaries, sagittal_heights, CellHeights,
    CompassLayout, Footprint, HeightFeatures, CELL_COUNT,
};
use fracture_core::Error;
use proptest::prelude::*;

const HINT: Option<[f64; 3]> = Some([0.0, 1.0, 0.0]);

fn heights(s: &Scene, body: usize) -> CellHeights {
    let label = s.ids[body];
    let frame = vertebra_frame(&s.labels, label, HINT).unwrap();
    cell_heights(&s.labels, label, &frame, &CompassLayout::default()).unwrap()
}

fn features(s: &Scene, body: usize) -> HeightFeatures {
    let label = s.ids[body];
    let frame = vertebra_frame(&s.labels, label, HINT).unwrap();
    height_features(&s.labels, label, &frame, &CompassLayout::default()).unwrap()
}

#[test]
fn uniform_body_gives_nominal_heights_everywhere() {
    for spacing in [[1.0, 1.0, 1.0], [0.7, 0.7, 1.5]] {
        let s = scene(&[uniform(1, 20.0)], spacing);
        let ch = heights(&s, 0);
        let hs: Vec<f64> = ch.heights.iter().map(|h| h.expect("no missing cell")).collect();
        for (cell, h) in hs.iter().enumerate() {
            assert!((h - 20.0).abs() <= spacing[2], "cell {cell}: {h}");
        }
        let spread = hs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - hs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread <= 2.0 * spacing[2]);

        let f = features(&s, 0);
        for v in [f.h_c, f.h_a, f.h_p, f.h_l, f.h_r, f.h_avg, f.h_avg_5, f.anterior, f.center, f.posterior, f.manual_mean, f.mean_h] {
            assert!((v.unwrap() - 20.0).abs() <= spacing[2]);
        }
    }
}

#[test]
fn cells_partition_the_footprint() {
    let s = scene(&[wedge(1, 10.0, 20.0)], [0.9, 0.9, 1.2]);
    let frame = vertebra_frame(&s.labels, s.ids[0], HINT).unwrap();
    let fp = Footprint::from_label(&s.labels, s.ids[0], &frame).unwrap();
    let ch = cell_heights(&s.labels, s.ids[0], &frame, &CompassLayout::default()).unwrap();
    assert_eq!(ch.column_counts.iter().sum::<usize>(), fp.columns.len());
    assert!(ch.column_counts.iter().all(|&c| c > 0));
}

#[test]
fn wedge_cells_and_regions() {
    let s = scene(&[wedge(1, 10.0, 20.0)], [1.0, 1.0, 1.0]);
    let ch = heights(&s, 0);
    for cell in [9, 1] {
        let h = ch.heights[cell].unwrap();
        assert!((h - 10.0).abs() <= 1.0, "cell {cell}: {h}");
    }
    for cell in [13, 5] {
        let h = ch.heights[cell].unwrap();
        assert!((h - 20.0).abs() <= 1.0, "cell {cell}: {h}");
    }
    let r = regional_summaries(&ch).unwrap();
    let (a, avg, p) = (r.h_a.unwrap(), r.h_avg.unwrap(), r.h_p.unwrap());
    assert!(a < avg && avg < p, "{a} {avg} {p}");
}

#[test]
fn wedge_sagittal_heights() {
    let s = scene(&[wedge(1, 10.0, 20.0)], [1.0, 1.0, 1.0]);
    let frame = vertebra_frame(&s.labels, s.ids[0], HINT).unwrap();
    let sh = sagittal_heights(&s.labels, s.ids[0], &frame).unwrap();
    let (a, p, m) = (sh.anterior.unwrap(), sh.posterior.unwrap(), sh.manual_mean.unwrap());
    assert!((a - 10.0).abs() <= 1.0, "anterior {a}");
    assert!((p - 20.0).abs() <= 1.0, "posterior {p}");
    assert!((m - 15.0).abs() <= 1.0, "manual mean {m}");
}

#[test]
fn biconcave_centre_is_lower_than_rim() {
    let s = scene(&[biconcave(1, 12.0, 20.0)], [1.0, 1.0, 1.0]);
    let frame = vertebra_frame(&s.labels, s.ids[0], HINT).unwrap();
    let sh = sagittal_heights(&s.labels, s.ids[0], &frame).unwrap();
    assert!(sh.center.unwrap() < sh.anterior.unwrap());
}

#[test]
fn absent_label_is_an_error() {
    let s = scene(&[uniform(1, 20.0)], [1.0, 1.0, 1.0]);
    let frame = vertebra_frame(&s.labels, s.ids[0], HINT).unwrap();
    let err = cell_heights(&s.labels, 77, &frame, &CompassLayout::default()).unwrap_err();
    assert!(matches!(err, Error::LabelNotFound(77)), "{err}");
}

#[test]
fn stacked_contrasts() {
    let c = contrast_features(&[(1, Some(20.0)), (2, Some(10.0)), (3, Some(20.0))]);
    assert_eq!((c[1].p, c[1].n, c[1].a), (Some(0.5), Some(0.5), Some(0.5)));
    assert_eq!(c[0].p, None);
    assert_eq!(c[0].a, c[0].n);

    let s = scene(&[uniform(1, 20.0), uniform(2, 20.0), uniform(3, 20.0)], [1.0, 1.0, 1.0]);
    let h: Vec<(u32, Option<f64>)> = (0..3).map(|i| (i as u32 + 1, features(&s, i).h_avg)).collect();
    let c = contrast_features(&h);
    for v in [c[1].p, c[1].n, c[1].a] {
        assert!((v.unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn doubling_heights_doubles_features_and_keeps_contrasts() {
    let base = [wedge(1, 10.0, 16.0), wedge(2, 8.0, 14.0), wedge(3, 10.0, 16.0)];
    let doubled: Vec<_> = base
        .iter()
        .map(|s| {
            let mut d = s.clone();
            for h in &mut d.cell_heights {
                *h *= 2.0;
            }
            d
        })
        .collect();
    let (s1, s2) = (scene(&base, [1.0, 1.0, 0.5]), scene(&doubled, [1.0, 1.0, 0.5]));
    let f1 = features(&s1, 1);
    let f2 = features(&s2, 1);
    let pairs = [
        (f1.h_c, f2.h_c),
        (f1.h_a, f2.h_a),
        (f1.h_p, f2.h_p),
        (f1.h_avg, f2.h_avg),
        (f1.mean_h, f2.mean_h),
    ];
    for (a, b) in pairs {
        let (a, b) = (a.unwrap(), b.unwrap());
        assert!((b - 2.0 * a).abs() <= 0.5 + 1e-9, "{a} -> {b}");
    }
    // ratios of exactly doubled heights are unchanged
    let h1: Vec<(u32, Option<f64>)> = (0..3).map(|i| (i as u32 + 1, features(&s1, i).h_avg)).collect();
    let h2: Vec<(u32, Option<f64>)> = h1.iter().map(|&(l, h)| (l, h.map(|v| 2.0 * v))).collect();
    for (a, b) in contrast_features(&h1).iter().zip(contrast_features(&h2).iter()) {
        for (x, y) in [(a.p, b.p), (a.n, b.n), (a.a, b.a)] {
            assert_eq!(x.is_some(), y.is_some());
            if let (Some(x), Some(y)) = (x, y) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }
    // re-rendered at double height, each measured height carries one slice
    // of closed-interval extent, so ratios agree to that resolution only
    let m2: Vec<(u32, Option<f64>)> = (0..3).map(|i| (i as u32 + 1, features(&s2, i).h_avg)).collect();
    let (c1, c2) = (contrast_features(&h1), contrast_features(&m2));
    let (x, y) = (c1[1].a.unwrap(), c2[1].a.unwrap());
    assert!((x - y).abs() < 0.5 / 14.0, "{x} vs {y}");
}

#[test]
fn cells_in_every_ring_are_present() {
    let s = scene(&[uniform(1, 20.0)], [1.0, 1.0, 1.0]);
    let ch = heights(&s, 0);
    assert_eq!(ch.heights.iter().filter(|h| h.is_some()).count(), CELL_COUNT);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn whole_voxel_translation_changes_nothing(dx in 0usize..4, dy in 0usize..4, dz in 0usize..4) {
        let specs = [wedge(1, 12.0, 18.0)];
        let a = scene(&specs, [1.0, 1.0, 1.0]);
        let b = scene_at(&specs, [1.0, 1.0, 1.0], [dx, dy, dz]);
        let (fa, fb) = (features(&a, 0), features(&b, 0));
        let va = [fa.h_c, fa.h_a, fa.h_p, fa.h_l, fa.h_r, fa.h_avg, fa.h_avg_5, fa.anterior, fa.center, fa.posterior, fa.manual_mean, fa.mean_h];
        let vb = [fb.h_c, fb.h_a, fb.h_p, fb.h_l, fb.h_r, fb.h_avg, fb.h_avg_5, fb.anterior, fb.center, fb.posterior, fb.manual_mean, fb.mean_h];
        for (x, y) in va.iter().zip(&vb) {
            prop_assert!((x.unwrap() - y.unwrap()).abs() < 1e-9);
        }
    }
}

#[test]
fn frame_of_axis_aligned_body_is_world_axes() {
    let s = scene(&[uniform(1, 20.0)], [1.0, 1.0, 1.0]);
    let f = vertebra_frame(&s.labels, s.ids[0], HINT).unwrap();
    for (got, want) in [(f.axis_si, [0.0, 0.0, 1.0]), (f.axis_ap, [0.0, 1.0, 0.0]), (f.axis_lr, [-1.0, 0.0, 0.0])] {
        for k in 0..3 {
            assert!((got[k] - want[k]).abs() < 1e-6, "{got:?} vs {want:?}");
        }
    }
}
