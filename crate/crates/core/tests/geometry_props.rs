use proptest::prelude::*;
use tubekit::geometry::BBox;
use tubekit::BoundingBox;

fn unit_box() -> impl Strategy<Value = BoundingBox> {
    (0.0..0.95f64, 0.0..0.95f64, 0.01..1.0f64, 0.01..1.0f64).prop_map(|(x, y, fw, fh)| {
        let w = (1.0 - x) * fw;
        let h = (1.0 - y) * fh;
        BBox::new(x, y, x + w.max(1e-3), y + h.max(1e-3)).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn ranges_and_order(a in unit_box(), b in unit_box()) {
        let (iou, giou) = (a.iou(&b), a.giou(&b));
        prop_assert!((0.0..=1.0).contains(&iou));
        prop_assert!(giou > -1.0 && giou <= 1.0);
        prop_assert!(giou <= iou + 1e-12);
    }

    #[test]
    fn symmetric(a in unit_box(), b in unit_box()) {
        prop_assert!((a.iou(&b) - b.iou(&a)).abs() <= 1e-12);
        prop_assert!((a.giou(&b) - b.giou(&a)).abs() <= 1e-12);
    }

    #[test]
    fn self_overlap_is_one(a in unit_box()) {
        prop_assert!((a.iou(&a) - 1.0).abs() <= 1e-12);
        prop_assert!((a.giou(&a) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn translation_invariant(a in unit_box(), b in unit_box(), sx in 0.0..1.0f64, sy in 0.0..1.0f64) {
        // Shift both boxes by an amount that keeps them inside the frame.
        let lo_x = -a.x1().min(b.x1());
        let hi_x = 1.0 - a.x2().max(b.x2());
        let lo_y = -a.y1().min(b.y1());
        let hi_y = 1.0 - a.y2().max(b.y2());
        let dx = lo_x + sx * (hi_x - lo_x);
        let dy = lo_y + sy * (hi_y - lo_y);
        let (ta, tb) = (a.translate(dx, dy).unwrap(), b.translate(dx, dy).unwrap());
        prop_assert!((ta.iou(&tb) - a.iou(&b)).abs() <= 1e-12);
        prop_assert!((ta.giou(&tb) - a.giou(&b)).abs() <= 1e-12);
    }

    #[test]
    fn center_size_round_trip(a in unit_box()) {
        let back = a.to_center_size().to_bbox().unwrap();
        for (u, v) in a.corners().iter().zip(back.corners()) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn lerp_endpoints(a in unit_box(), b in unit_box(), s in 0.0..=1.0f64) {
        prop_assert_eq!(a.lerp(&b, 0.0), a);
        let m = a.lerp(&b, s);
        prop_assert!(m.width() > 0.0 && m.height() > 0.0);
    }
}
