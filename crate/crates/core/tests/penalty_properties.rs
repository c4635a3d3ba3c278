use gradqvi_core::penalty::{
    penalty_big_k, penalty_k, penalty_k_prime, smooth_constraint, GSmoothing, RegularizationParams,
};
use gradqvi_core::Grid;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn k_is_monotone_and_at_least_one(a in -2.0f64..2.0, b in -2.0f64..2.0, eps in 1e-3f64..0.9) {
        let (s1, s2) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(penalty_k(s1, eps) <= penalty_k(s2, eps));
        prop_assert!(penalty_k(s1, eps) >= 1.0);
        prop_assert!(penalty_k_prime(s1, eps) >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn smoothing_stays_above_floor(
        g in prop::collection::vec(0.0f64..3.0, 40),
        width in 0usize..9,
        floor in 0.1f64..1.0,
    ) {
        let grid = Grid::new_2d((0.0, 1.0), (0.0, 1.0), (5, 5)).unwrap();
        let params = RegularizationParams::new(0.1, 0.1).unwrap().with_smoothing(GSmoothing::Box(width));
        let clamped: Vec<f64> = g.iter().map(|v| v.max(floor)).collect();
        let out = smooth_constraint(&grid, &clamped, &params, floor);
        prop_assert_eq!(out.len(), clamped.len());
        prop_assert!(out.iter().all(|&v| v >= floor));
    }
}

#[test]
fn seams_are_c1() {
    for eps in [0.5, 0.1, 1e-2, 1e-3] {
        for seam in [0.0, eps] {
            let eta = 1e-12;
            let (lo, hi) = (seam - eta, seam + eta);
            // a smooth k still moves by 2 eta k' across the probe; only the
            // excess over that counts as a jump
            let drift = 2.0 * eta * penalty_k_prime(seam, eps);
            let jump = (penalty_k(hi, eps) - penalty_k(lo, eps) - drift).abs();
            assert!(jump <= 1e-10, "k at {seam}, eps {eps}: {jump}");
            let h = 1e-6 * eps;
            let k2 = (penalty_k_prime(seam + h, eps) - penalty_k_prime(seam - h, eps)) / (2.0 * h);
            let jump = (penalty_k_prime(hi, eps) - penalty_k_prime(lo, eps) - 2.0 * eta * k2).abs();
            let scale = 1.0f64.max(penalty_k_prime(seam, eps));
            assert!(jump <= 1e-10 * scale, "k' at {seam}, eps {eps}: {jump}");
        }
    }
}

#[test]
fn antiderivative_is_convex() {
    for eps in [0.5, 0.1, 1e-2] {
        let h = eps / 200.0;
        for i in -400..=1200 {
            let s = i as f64 * h;
            let d2 = penalty_big_k(s + h, eps) - 2.0 * penalty_big_k(s, eps) + penalty_big_k(s - h, eps);
            assert!(d2 / (h * h) >= -1e-8, "eps {eps}, s {s}: {d2}");
        }
    }
}
