use proptest::prelude::*;

use fatou_core::agent_space::AgentSpace;
use fatou_core::economy::Preference;
use fatou_core::galerkin::SchemeDescriptor;
use fatou_core::pipeline::{
    build_truncated_economy, run_we2, AgentTypeSpec, DensitySpec, FunctionSpaceEconomySpec, PipelineParams,
};

fn half(lo: f64) -> DensitySpec {
    DensitySpec::Interval { lo, hi: lo + 0.5, value: 1.0 }
}

/// Two types over the two halves of [0,1): measurable at level 1.
#[derive(Debug, Clone)]
struct TwoHalves {
    masses: Vec<f64>,
    shares: Vec<f64>,
    endowments: Vec<[f64; 2]>,
}

impl TwoHalves {
    fn spec(&self, n_max: usize) -> FunctionSpaceEconomySpec {
        let types = self
            .shares
            .iter()
            .zip(&self.endowments)
            .map(|(a, e)| AgentTypeSpec {
                moments: vec![half(0.0), half(0.5)],
                inner: Preference::CobbDouglas { weights: vec![*a, 1.0 - a] },
                endowment: DensitySpec::Steps { values: e.to_vec() },
                reserve: None,
            })
            .collect();
        FunctionSpaceEconomySpec {
            space: AgentSpace::from_masses(&self.masses).unwrap(),
            scheme: SchemeDescriptor::Dyadic { n_max },
            types,
            margin: 0.1,
            cap: None,
        }
    }

    /// Price densities on the halves, unit L2 norm. Spending on the left
    /// half clears its supply: p_L S_L = sum_c m_c a_c (p_L e_cL + p_R e_cR) / 2.
    fn oracle(&self) -> [f64; 2] {
        let (mut a, mut b, mut supply) = (0.0, 0.0, 0.0);
        for ((m, s), e) in self.masses.iter().zip(&self.shares).zip(&self.endowments) {
            a += m * s * e[0] / 2.0;
            b += m * s * e[1] / 2.0;
            supply += m * e[0] / 2.0;
        }
        // (supply - a) p_L = b p_R
        let (pl, pr) = (b, supply - a);
        let norm = (0.5 * pl * pl + 0.5 * pr * pr).sqrt();
        [pl / norm, pr / norm]
    }
}

fn two_halves() -> impl Strategy<Value = TwoHalves> {
    (
        prop::collection::vec(0.2f64..2.0, 2),
        prop::collection::vec(0.1f64..0.9, 2),
        prop::collection::vec((0.2f64..3.0, 0.2f64..3.0), 2),
    )
        .prop_map(|(masses, shares, e)| TwoHalves { masses, shares, endowments: e.into_iter().map(|(l, r)| [l, r]).collect() })
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn level_one_measurable_specs_are_solved_at_level_one(inst in two_halves(), n_max in 3usize..=4) {
        let spec = inst.spec(n_max);
        let schedule: Vec<usize> = (1..=n_max).collect();
        let params = PipelineParams::default();
        let res = run_we2(&spec, &schedule, &params).unwrap();
        prop_assert!(res.converged, "{:?}", res.failures);

        // Finer levels add nothing the agents can tell apart.
        let first = &res.levels[0].price_top;
        for l in &res.levels[1..] {
            prop_assert!(max_diff(&l.price_top, first) <= 1e-12, "level {}: {:e}", l.level, max_diff(&l.price_top, first));
        }
        prop_assert_eq!(&res.limit_price, &res.levels.last().unwrap().price_top);
        prop_assert!(max_diff(&res.limit_price, first) <= 1e-12);

        let expect = inst.oracle();
        let top = res.limit_price.len();
        for (j, p) in res.limit_price.iter().enumerate() {
            let e = expect[if 2 * j < top { 0 } else { 1 }];
            prop_assert!((p - e).abs() <= 1e-6, "bin {j}: {p} vs {e}");
        }
    }

    #[test]
    fn limit_is_a_feasible_normalized_equilibrium(inst in two_halves(), n_max in 3usize..=4) {
        let spec = inst.spec(n_max);
        let schedule: Vec<usize> = (1..=n_max).collect();
        let params = PipelineParams::default();
        let res = run_we2(&spec, &schedule, &params).unwrap();
        prop_assert!(res.converged, "{:?}", res.failures);

        let scheme = spec.validate().unwrap();
        let econ = build_truncated_economy(&spec, &scheme, n_max).unwrap();
        let used = res.limit_allocation.integral();
        for (f, w) in used.iter().zip(econ.aggregate_endowment()) {
            prop_assert!(f - w <= params.tol, "allocation {f} exceeds endowment {w}");
        }
        let v = res.verification.clone().expect("verified limit");
        prop_assert!(v.budget_equality_max <= params.tol, "budget {:e}", v.budget_equality_max);

        let p = &res.limit_price;
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        let bin = 1.0 / p.len() as f64;
        let norm = p.iter().map(|v| v * v * bin).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() <= 1e-12, "norm {norm}");

        for w in res.price_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "trace {:?}", res.price_trace);
        }
    }
}
