use mono3d_core::geometry::{iou2d, Box2D, Box3D};
use mono3d_core::target_loss::{assign_from_quality, per_image_ap, quality};
use proptest::prelude::*;

fn detection() -> impl Strategy<Value = Box3D> {
    (
        0.0..100.0f64,
        0.0..100.0f64,
        5.0..50.0f64,
        5.0..50.0f64,
        prop::array::uniform3(-2.0..2.0f64),
        prop::array::uniform3(0.5..4.0f64),
        -3.0..3.0f64,
    )
        .prop_map(|(x, y, w, h, c, d, yaw)| {
            Box3D::new(c, d, yaw, 0.5, Box2D::new(x, y, x + w, y + h).unwrap()).unwrap()
        })
}

fn image() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (1usize..12).prop_flat_map(|n| (prop::collection::vec(0.0..1.0f64, n), prop::collection::vec(0u8..2, n)))
}

proptest! {
    #[test]
    fn quality_bounded_by_iou2d(b in detection(), g in detection()) {
        let q = quality(&b, &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&q));
        prop_assert!(q <= iou2d(&b.box2d, &g.box2d) + 1e-12);
    }

    #[test]
    fn assignment_invariant_to_common_rescaling(
        q in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 3), 1..10),
        c in 0.1..1.0f64,
    ) {
        let beta = 0.3;
        let a = assign_from_quality(&q, 3, beta).unwrap();
        let scaled: Vec<Vec<f64>> = q.iter().map(|r| r.iter().map(|x| x * c).collect()).collect();
        let b = assign_from_quality(&scaled, 3, beta * c).unwrap();
        prop_assert_eq!(a.labels, b.labels);
        prop_assert_eq!(a.matched_gt, b.matched_gt);
    }

    #[test]
    fn positives_are_unique_and_above_threshold(
        q in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 4), 1..10),
    ) {
        let a = assign_from_quality(&q, 4, 0.3).unwrap();
        let mut used = [false; 4];
        for (i, m) in a.matched_gt.iter().enumerate() {
            if let Some(l) = *m {
                prop_assert!(!used[l]);
                used[l] = true;
                prop_assert!(q[i][l] >= 0.3);
                prop_assert!(a.quality[i] >= 0.3);
            }
        }
    }

    #[test]
    fn per_image_terms_are_independent(a in image(), b in image(), noise in prop::collection::vec(-0.5..0.5f64, 12)) {
        let before = per_image_ap(&[a.0.clone(), b.0.clone()], &[a.1.clone(), b.1.clone()]).unwrap();
        let moved: Vec<f64> = a.0.iter().zip(&noise).map(|(r, n)| r + n).collect();
        let after = per_image_ap(&[moved, b.0.clone()], &[a.1, b.1]).unwrap();
        prop_assert_eq!(before[1], after[1]);
        prop_assert!(after.iter().all(|ap| (0.0..=1.0).contains(ap)));
    }
}
