use proptest::prelude::*;

use fatou_core::galerkin::{coordinate_scheme, dyadic_scheme, interval_density, sample_midpoints};

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn level_and_vector() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
    (1usize..=12).prop_flat_map(|n| {
        let d = 1usize << n;
        (Just(n), prop::collection::vec(-5.0f64..5.0, d), prop::collection::vec(-5.0f64..5.0, d))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dyadic_projection_identities((n_max, x, _p) in level_and_vector()) {
        let s = dyadic_scheme(n_max).unwrap();
        let abs: Vec<f64> = x.iter().map(|v| v.abs()).collect();
        let bound = abs.iter().cloned().fold(0.0, f64::max);
        let proj: Vec<Vec<f64>> = (0..=n_max).map(|n| s.project(&x, n).unwrap()).collect();
        for n in 0..=n_max {
            prop_assert!(n == 0 || s.dim(n).unwrap() == 2 * s.dim(n - 1).unwrap());
            prop_assert!(sup(&s.project(&proj[n], n).unwrap(), &proj[n]) <= 1e-14 * bound.max(1.0));
            for m in 0..=n_max {
                prop_assert!(sup(&s.project(&proj[m], n).unwrap(), &proj[n.min(m)]) <= 1e-14 * bound.max(1.0));
            }
            prop_assert!(s.project(&abs, n).unwrap().iter().all(|v| *v >= 0.0));
            prop_assert!(proj[n].iter().all(|v| v.abs() <= bound));
        }
    }

    #[test]
    fn adjoint_duality((n_max, x, p) in level_and_vector()) {
        let s = dyadic_scheme(n_max).unwrap();
        for n in 0..=n_max {
            let lhs = s.pair(&s.adjoint_project(&p, n).unwrap(), &x).unwrap();
            let rhs = s.pair(&p, &s.project(&x, n).unwrap()).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12, "level {n}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn weak_gap_sits_under_a_shrinking_envelope(a in -2.0f64..2.0, b in -2.0f64..2.0, c in 0.5f64..6.0, lo in 0.0f64..0.9, len in 0.05f64..1.0) {
        // x is L-Lipschitz and the test is the indicator of [lo, hi). Only the
        // two level-n bins cut by the endpoints contribute, each at most
        // L h^2 / 4 with h the level-n bin width.
        let s = dyadic_scheme(10).unwrap();
        let x = sample_midpoints(&s, |w| a * w + b * (c * w).sin());
        let hi = (lo + len).min(1.0);
        let tests = vec![interval_density(&s, lo, hi)];
        let lip = a.abs() + b.abs() * c;
        for n in 0..=10 {
            let h = 0.5f64.powi(n as i32);
            let g = s.weak_convergence_gap(&x, &tests, n).unwrap();
            prop_assert!(g <= lip * h * h / 2.0 / (1.0 + hi - lo) + 1e-15, "level {n}: {g}");
        }
    }

    #[test]
    fn coordinate_scheme_keeps_a_prefix(x in prop::collection::vec(-5.0f64..5.0, 6)) {
        let s = coordinate_scheme(vec![2, 4, 6]).unwrap();
        let p1 = s.project(&x, 1).unwrap();
        prop_assert_eq!(&p1[..2], &x[..2]);
        prop_assert!(p1[2..].iter().all(|v| *v == 0.0));
        prop_assert_eq!(s.project(&p1, 2).unwrap(), p1.clone());
    }
}

#[test]
fn weak_gap_for_one_fixed_test_can_rise() {
    // The endpoint cancellation depends on where the endpoints fall inside
    // the level-n bins, so a single test need not see monotone decay.
    let s = dyadic_scheme(10).unwrap();
    let x = sample_midpoints(&s, |w| w);
    let tests = vec![interval_density(&s, 0.7178754259923767, 0.7678754259923767)];
    let g1 = s.weak_convergence_gap(&x, &tests, 1).unwrap();
    let g2 = s.weak_convergence_gap(&x, &tests, 2).unwrap();
    assert!(g2 > 3.0 * g1, "{g1} {g2}");
}
