use std::f64::consts::PI;

use mono3d_core::geometry::{giou3d, iou2d, iou3d, voxel_iou3d_oracle, Box2D, Box3D};
use proptest::prelude::*;

fn box2d() -> impl Strategy<Value = Box2D> {
    (0.0..300.0f64, 0.0..300.0f64, 0.0..80.0f64, 0.0..80.0f64)
        .prop_map(|(x, y, w, h)| Box2D::new(x, y, x + w, y + h).unwrap())
}

fn box3d(dims: std::ops::Range<f64>) -> impl Strategy<Value = Box3D> {
    (
        prop::array::uniform3(-3.0..3.0f64),
        prop::array::uniform3(dims),
        -PI..PI,
        box2d(),
    )
        .prop_map(|(c, d, yaw, b2)| Box3D::new(c, d, yaw, 0.5, b2).unwrap())
}

proptest! {
    #[test]
    fn measures_are_symmetric(a in box3d(0.2..4.0), b in box3d(0.2..4.0)) {
        prop_assert_eq!(iou2d(&a.box2d, &b.box2d), iou2d(&b.box2d, &a.box2d));
        prop_assert!((iou3d(&a, &b) - iou3d(&b, &a)).abs() < 1e-12);
        prop_assert!((giou3d(&a, &b).unwrap() - giou3d(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn measures_are_bounded(a in box3d(0.2..4.0), b in box3d(0.2..4.0)) {
        let i2 = iou2d(&a.box2d, &b.box2d);
        prop_assert!((0.0..=1.0).contains(&i2));
        let i = iou3d(&a, &b);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&i));
        let g = giou3d(&a, &b).unwrap();
        prop_assert!(g > -1.0 && g <= 1.0 + 1e-12);
        prop_assert!(g <= i + 1e-12, "giou {} > iou {}", g, i);
    }

    #[test]
    fn measures_are_translation_invariant(
        a in box3d(0.2..4.0),
        b in box3d(0.2..4.0),
        d in prop::array::uniform3(-20.0..20.0f64),
    ) {
        let (ta, tb) = (a.translate(d), b.translate(d));
        prop_assert!((iou3d(&a, &b) - iou3d(&ta, &tb)).abs() < 1e-12);
        prop_assert!((giou3d(&a, &b).unwrap() - giou3d(&ta, &tb).unwrap()).abs() < 1e-12);
        let (a2, b2) = (a.box2d.translate(d[0], d[1]), b.box2d.translate(d[0], d[1]));
        prop_assert!((iou2d(&a.box2d, &b.box2d) - iou2d(&a2, &b2)).abs() < 1e-12);
    }

    #[test]
    fn self_overlap_is_one(a in box3d(0.2..4.0)) {
        prop_assert!((iou3d(&a, &a) - 1.0).abs() < 1e-12);
        prop_assert!((giou3d(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn iou3d_matches_voxel_count(a in box3d(0.5..5.0), b in box3d(0.5..5.0)) {
        let exact = iou3d(&a, &b);
        let voxel = voxel_iou3d_oracle(&a, &b, 64.0).unwrap();
        prop_assert!((exact - voxel).abs() <= 0.03, "exact {} voxel {}", exact, voxel);
    }
}

#[test]
fn disjoint_boxes_have_negative_giou() {
    let a = Box3D::from_geometry([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0).unwrap();
    for dx in [2.0, 3.5, 10.0] {
        let b = Box3D::from_geometry([dx, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0).unwrap();
        let g = giou3d(&a, &b).unwrap();
        assert_eq!(iou3d(&a, &b), 0.0);
        assert!(g < 0.0);
        // union 2, hull dx + 1
        assert!((g - (2.0 / (dx + 1.0) - 1.0)).abs() < 1e-12);
    }
}
