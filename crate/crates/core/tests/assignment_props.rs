use proptest::prelude::*;
use tubekit::assignment::{cosine_similarity, solve_assignment, CostMatrix};

fn int_matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..=6, 0usize..=3).prop_flat_map(|(rows, extra)| {
        let cols = rows + extra;
        prop::collection::vec(-20i32..20, rows * cols)
            .prop_map(move |v| (rows, cols, v.into_iter().map(f64::from).collect()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn row_shift_keeps_matching((rows, cols, values) in int_matrix(), shifts in prop::collection::vec(-50i32..50, 6)) {
        let base = CostMatrix::new(rows, cols, values.clone()).unwrap();
        let shifted = CostMatrix::from_fn(rows, cols, |r, c| values[r * cols + c] + f64::from(shifts[r])).unwrap();
        let (a, b) = (solve_assignment(&base), solve_assignment(&shifted));
        prop_assert_eq!(a.pairs(), b.pairs());
        let delta: f64 = shifts[..rows].iter().map(|&s| f64::from(s)).sum();
        prop_assert_eq!(b.total(&shifted), a.total(&base) + delta);
    }

    #[test]
    fn transposed_problem_has_same_total((rows, cols, values) in int_matrix()) {
        let m = CostMatrix::new(rows, cols, values.clone()).unwrap();
        let t = CostMatrix::from_fn(cols, rows, |r, c| values[c * cols + r]).unwrap();
        prop_assert_eq!(solve_assignment(&m).total(&m), solve_assignment(&t).total(&t));
    }

    #[test]
    fn matching_is_injective_and_full((rows, cols, values) in int_matrix()) {
        let m = CostMatrix::new(rows, cols, values).unwrap();
        let a = solve_assignment(&m);
        prop_assert_eq!(a.pairs().len(), rows.min(cols));
        let mut seen_cols: Vec<usize> = a.pairs().iter().map(|p| p.1).collect();
        seen_cols.sort_unstable();
        seen_cols.dedup();
        prop_assert_eq!(seen_cols.len(), a.pairs().len());
    }

    #[test]
    fn cosine_is_scale_invariant(
        u in prop::collection::vec(-1.0..1.0f64, 6),
        v in prop::collection::vec(-1.0..1.0f64, 6),
        s in 0.01..100.0f64,
    ) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let scaled: Vec<f64> = u.iter().map(|x| x * s).collect();
        let (c0, c1) = (cosine_similarity(&u, &v).unwrap(), cosine_similarity(&scaled, &v).unwrap());
        prop_assert!((c0 - c1).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&c0));
    }
}
