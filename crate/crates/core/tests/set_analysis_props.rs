use proptest::prelude::*;

use fatou_core::agent_space::build_uniform;
use fatou_core::set_analysis::{
    aumann_integral, caratheodory_decompose, hausdorff_distance, inclusion_gap, lyapunov_range, solid_hull_gap,
    upper_limit, CellMultifunction, PointSet, VectorMeasure,
};

fn point_set(dim: usize, max: usize) -> impl Strategy<Value = PointSet> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), 1..=max)
        .prop_map(move |pts| PointSet::new(dim, pts).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn upper_limit_grows_with_tol(
        seq in prop::collection::vec(point_set(2, 3), 8..20),
        window in 2usize..6,
        t1 in 1e-6f64..0.5,
        extra in 0.0f64..0.5,
    ) {
        let window = window.min(seq.len() / 2);
        let small = upper_limit(&seq, window, t1).unwrap();
        let large = upper_limit(&seq, window, t1 + extra).unwrap();
        if !small.is_empty() {
            prop_assert!(!large.is_empty());
            prop_assert_eq!(inclusion_gap(&small, &large).unwrap(), 0.0);
        }
    }

    #[test]
    fn hausdorff_triangle(a in point_set(3, 6), b in point_set(3, 6), c in point_set(3, 6)) {
        let ab = hausdorff_distance(&a, &b).unwrap();
        let bc = hausdorff_distance(&b, &c).unwrap();
        let ac = hausdorff_distance(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn caratheodory_support_is_small(
        pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..12),
        raw in prop::collection::vec(0.0f64..1.0, 12),
    ) {
        let w: Vec<f64> = raw[..pts.len()].to_vec();
        let total: f64 = w.iter().sum::<f64>() + 1e-9;
        let mut x = vec![0.0; 3];
        for (p, wi) in pts.iter().zip(&w) {
            for j in 0..3 {
                x[j] += p[j] * (wi + 1e-9 / pts.len() as f64) / total;
            }
        }
        let s = PointSet::new(3, pts).unwrap();
        let d = caratheodory_decompose(&x, &s).unwrap();
        prop_assert!(d.indices.len() <= 4);
        prop_assert!(d.weights.iter().all(|w| *w >= -1e-12));
        prop_assert!((d.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(d.residual <= 1e-9);
    }

    #[test]
    fn aumann_integral_approaches_its_convexification(g in point_set(2, 3), n in 8usize..=10) {
        // Every cell takes the same set G with mass 1/n, so the integral is the
        // n-fold average of G; its distance to its hull is at most sqrt(2) diam(G) / n.
        let space = build_uniform(n, 1.0).unwrap();
        let gamma = CellMultifunction::new(vec![g.clone(); n]).unwrap();
        let int = aumann_integral(&gamma, &space, 1 << 20, None).unwrap();
        let diam = g.iter().flat_map(|a| g.iter().map(move |b| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())).fold(0.0, f64::max);
        let (gap, approx) = solid_hull_gap(&int).unwrap();
        prop_assert!(!approx);
        prop_assert!(gap <= 2f64.sqrt() * diam / n as f64 + 1e-12, "gap {gap}, diam {diam}, n {n}");
    }

    #[test]
    fn lyapunov_gap_halves_under_refinement(density in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 3..=6)) {
        let m = VectorMeasure::new(density).unwrap();
        let coarse = lyapunov_range(&m, None).unwrap().convexity_gap;
        let fine = lyapunov_range(&m.refine(2).unwrap(), None).unwrap().convexity_gap;
        prop_assert!(fine <= 1.25 * coarse / 2.0 + 1e-12, "coarse {coarse}, fine {fine}");
    }
}
