use proptest::prelude::*;
use tubekit::autolabel::{coverage_filter, is_fixed_point, merge_tubes, AutolabelConfig, CandidateTube, Coverage};
use tubekit::exposure::p_error_free;
use tubekit::geometry::BBox;
use tubekit::grounding_eval::FrameInterval;

fn candidates() -> impl Strategy<Value = Vec<CandidateTube<f64>>> {
    let one = (0usize..2, 0usize..40, 1usize..8, prop::collection::vec(-1.0..1.0f64, 3), 0.05..0.9f64);
    prop::collection::vec(one, 1..8).prop_map(|specs| {
        specs
            .into_iter()
            .map(|(cat, start, len, mut app, x)| {
                if app.iter().all(|v| v.abs() < 1e-3) {
                    app[0] = 1.0;
                }
                let b = BBox::new(x, 0.1, x + 0.1, 0.3).unwrap();
                CandidateTube::from_boxes(["car", "dog"][cat], start, &vec![(b, 0.5); len], app).unwrap()
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn linearization_error_is_second_order(l in 1usize..500, u in 0.0..1.0f64) {
        let eps = u / l as f64;
        let p = p_error_free(l, eps);
        let bound = (l as f64 * eps).powi(2) / 2.0;
        prop_assert!((p.analytic - p.linearized).abs() <= bound + 1e-15);
    }

    #[test]
    fn error_free_rate_decreases(l in 1usize..500, eps in 1e-4..0.5f64) {
        prop_assert!(p_error_free(l + 1, eps).analytic < p_error_free(l, eps).analytic);
        prop_assert!(p_error_free(l, eps * 1.01).analytic < p_error_free(l, eps).analytic);
    }

    #[test]
    fn merging_reaches_fixed_point_and_conserves_records(cands in candidates(), theta in -0.5..1.0f64) {
        let cfg = AutolabelConfig { appearance_threshold: theta, coverage_threshold: 0.5 };
        let out = merge_tubes(&cands, &cfg).unwrap();
        prop_assert!(is_fixed_point(&out.tubes, &cfg).unwrap());
        let before: usize = cands.iter().map(CandidateTube::observed_count).sum();
        let after: usize = out.tubes.iter().map(CandidateTube::observed_count).sum();
        prop_assert_eq!(before, after);
        let again = merge_tubes(&out.tubes, &cfg).unwrap();
        prop_assert_eq!(&again.tubes, &out.tubes);
    }

    #[test]
    fn coverage_is_monotone_in_span(start in 0usize..30, len in 1usize..30, grow in 1usize..10, a in 0usize..30, n in 1usize..30) {
        let cfg = AutolabelConfig::default();
        let b = BBox::new(0.1, 0.1, 0.2, 0.2).unwrap();
        let interval = FrameInterval::new(a, a + n - 1).unwrap();
        let base = CandidateTube::from_boxes("x", start, &vec![(b, 0.5); len], vec![1.0]).unwrap();
        let wider = CandidateTube::from_boxes("x", start.saturating_sub(grow), &vec![(b, 0.5); len + 2 * grow], vec![1.0]).unwrap();
        if coverage_filter(&base, &interval, &cfg).unwrap() == Coverage::Keep {
            prop_assert_eq!(coverage_filter(&wider, &interval, &cfg).unwrap(), Coverage::Keep);
        }
    }
}
