use proptest::prelude::*;

use fatou_core::agent_space::{build_uniform, refine, AgentSpace, CellFunction};
use fatou_core::fatou::{
    approx_fatou_epsilon, check_fatou_inclusion, fatou_select, sliding_bump_sequence, weak_limit, FunctionSequence,
};
use fatou_core::set_analysis::TestPanel;

const TOL: f64 = 1e-6;
// A multiple of every period below.
const WINDOW: usize = 12;

/// Per cell: a transient prefix, then a cycle of period 1..=3.
#[derive(Debug, Clone)]
struct Instance {
    masses: Vec<f64>,
    k: usize,
    prefix: usize,
    cycles: Vec<Vec<Vec<f64>>>,
    noise: Vec<f64>,
}

impl Instance {
    fn value(&self, t: usize, c: usize) -> Vec<f64> {
        if t < self.prefix {
            let base = (t * self.masses.len() + c) * self.k;
            return self.noise[base..base + self.k].to_vec();
        }
        let cyc = &self.cycles[c];
        cyc[(t - self.prefix) % cyc.len()].clone()
    }

    fn sequence(&self, n_terms: usize) -> FunctionSequence {
        let space = AgentSpace::from_masses(&self.masses).unwrap();
        let terms = (0..n_terms)
            .map(|t| {
                let vals = (0..self.masses.len()).flat_map(|c| self.value(t, c)).collect();
                CellFunction::new(self.k, vals).unwrap()
            })
            .collect();
        FunctionSequence::new(space, terms, 1.0).unwrap()
    }
}

fn instance(max_cells: usize, max_period: usize) -> impl Strategy<Value = Instance> {
    (2..=max_cells, 1usize..=3, 0usize..6).prop_flat_map(move |(n, k, prefix)| {
        let point = prop::collection::vec(-1.0f64..1.0, k);
        let cycle = (1..=max_period).prop_flat_map(move |p| prop::collection::vec(point.clone(), p));
        (
            prop::collection::vec(0.05f64..2.0, n),
            Just(k),
            Just(prefix),
            prop::collection::vec(cycle, n),
            prop::collection::vec(-1.0f64..1.0, 6 * n * k),
        )
            .prop_map(|(masses, k, prefix, cycles, noise)| Instance { masses, k, prefix, cycles, noise })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn selection_is_exact_in_finite_dimension(inst in instance(6, 3)) {
        let seq = inst.sequence(60);
        prop_assert!(weak_limit(&seq, WINDOW, TOL).unwrap().converged);
        let rep = fatou_select(&seq, WINDOW, TOL).unwrap();
        let mass: f64 = inst.masses.iter().sum();
        prop_assert!(rep.pointwise_gap <= TOL, "pointwise {}", rep.pointwise_gap);
        prop_assert!(rep.integral_gap <= inst.k as f64 * TOL * mass, "integral {}", rep.integral_gap);
        let sel = rep.selection_integral();
        for (a, b) in sel.iter().zip(&rep.limit_integral) {
            prop_assert!((a - b).abs() <= inst.k as f64 * TOL * mass);
        }
    }

    #[test]
    fn inclusion_gap_never_grows_under_refinement(inst in instance(3, 3), factor in 2usize..=3) {
        let seq = inst.sequence(48);
        let space = AgentSpace::from_masses(&inst.masses).unwrap();
        let r = refine(&space, factor).unwrap();
        let fine = seq.lift(&r.space, &r.parents).unwrap();
        let g0 = check_fatou_inclusion(&seq, WINDOW, TOL, 1 << 16).unwrap();
        let g1 = check_fatou_inclusion(&fine, WINDOW, TOL, 1 << 16).unwrap();
        prop_assert!(g1 <= g0, "coarse {g0}, fine {g1}");
    }

    #[test]
    fn singleton_clusters_are_not_split(inst in instance(6, 1)) {
        let seq = inst.sequence(40);
        let rep = fatou_select(&seq, WINDOW, TOL).unwrap();
        let wl = weak_limit(&seq, WINDOW, TOL).unwrap();
        prop_assert_eq!(rep.parents, (0..inst.masses.len()).collect::<Vec<_>>());
        prop_assert_eq!(rep.selection.as_slice(), wl.limit.as_slice());
        prop_assert_eq!(rep.selection_space.masses(), space_masses(&inst.masses));
    }

    #[test]
    fn sliding_bump_epsilon_matches_its_closed_form_at_every_d(cells in 2usize..=4, scale in 0.5f64..2.0) {
        // The rank-3 proxy misses cells - min(cells, 3) bumps of mass 1/cells.
        let space = build_uniform(cells, 1.0).unwrap();
        let oracle = scale * ((cells - cells.min(3)) as f64).sqrt() / cells as f64;
        let mut prev = f64::NEG_INFINITY;
        for d in [4usize, 8, 16] {
            let seq = sliding_bump_sequence(&space, d, scale, 128).unwrap();
            let low = approx_fatou_epsilon(&seq, 32, TOL, Some(&TestPanel::coordinates(d, 3).unwrap())).unwrap();
            let full = approx_fatou_epsilon(&seq, 32, TOL, Some(&TestPanel::coordinates(d, d).unwrap())).unwrap();
            prop_assert!((low - oracle).abs() <= 1e-9, "d = {d}: {low} vs {oracle}");
            prop_assert!(low >= prev - 1e-9);
            prop_assert!(full <= 1e-6, "d = {d}: full-rank {full}");
            prev = low;
        }
    }
}

fn space_masses(m: &[f64]) -> Vec<f64> {
    AgentSpace::from_masses(m).unwrap().masses()
}
