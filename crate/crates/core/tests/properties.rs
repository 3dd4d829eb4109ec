use minilp::{ComparisonOp, OptimizationDirection, Problem};
use proptest::prelude::*;
use qtraj::engine::word_probability;
use qtraj::measures::{wasserstein1, DiscreteMeasure};
use qtraj::model::{branches, channel_apply, DensityMatrix, ProjectiveState, Word, C64};
use qtraj::reference::random_valid_family;

fn state(dim: usize) -> impl Strategy<Value = ProjectiveState> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), dim)
        .prop_filter_map("zero vector", |v| {
            let z: Vec<C64> = v.into_iter().map(|(re, im)| C64::new(re, im)).collect();
            ProjectiveState::from_vector(&z).ok()
        })
}

fn measure(dim: usize, max_atoms: usize) -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec((state(dim), 0.05f64..1.0), 1..=max_atoms)
        .prop_map(|atoms| DiscreteMeasure::normalized(atoms).unwrap())
}

/// Transport LP solved by a generic simplex.
fn lp_w1(a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Vec<_>> = a
        .atoms()
        .iter()
        .map(|(x, _)| b.atoms().iter().map(|(y, _)| p.add_var(x.distance(y), (0.0, f64::INFINITY))).collect())
        .collect();
    for (i, (_, w)) in a.atoms().iter().enumerate() {
        let row: Vec<_> = vars[i].iter().map(|&v| (v, 1.0)).collect();
        p.add_constraint(&row, ComparisonOp::Eq, *w);
    }
    for (j, (_, w)) in b.atoms().iter().enumerate() {
        let col: Vec<_> = vars.iter().map(|r| (r[j], 1.0)).collect();
        p.add_constraint(&col, ComparisonOp::Eq, *w);
    }
    p.solve().unwrap().objective()
}

fn density(dim: usize) -> impl Strategy<Value = DensityMatrix> {
    prop::collection::vec((state(dim), 0.05f64..1.0), 1..=dim).prop_map(|atoms| {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        let atoms: Vec<_> = atoms.into_iter().map(|(s, w)| (s, w / total)).collect();
        DensityMatrix::mixture(&atoms).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w1_matches_linear_program(a in measure(2, 5), b in measure(2, 5)) {
        let w = wasserstein1(&a, &b).unwrap();
        let lp = lp_w1(&a, &b);
        prop_assert!((w - lp).abs() <= 1e-9, "transport {w} vs LP {lp}");
    }

    #[test]
    fn w1_triangle_inequality(a in measure(3, 4), b in measure(3, 4), c in measure(3, 4)) {
        let ab = wasserstein1(&a, &b).unwrap();
        let bc = wasserstein1(&b, &c).unwrap();
        let ac = wasserstein1(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert!(wasserstein1(&a, &a).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn tv_bound_on_words(seed in 0u64..1000, rho in density(2), sigma in density(2), len in 1usize..5) {
        let fam = random_valid_family(2, 3, seed).unwrap();
        let mut tv = 0.0;
        for w in Word::all_of_length(3, len) {
            tv += (word_probability(&rho, &w, &fam).unwrap() - word_probability(&sigma, &w, &fam).unwrap()).abs();
        }
        prop_assert!(0.5 * tv <= rho.trace_distance(&sigma) + 1e-10);
    }

    #[test]
    fn kernel_weights_sum_to_one(seed in 0u64..1000, x in state(3), k in 2usize..5) {
        let fam = random_valid_family(3, k, seed).unwrap();
        let total: f64 = branches(&fam, &x).iter().map(|b| b.2).sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn channel_preserves_density_matrices(seed in 0u64..1000, rho in density(3)) {
        let fam = random_valid_family(3, 2, seed).unwrap();
        let out = channel_apply(&fam, &rho);
        prop_assert!((out.matrix().trace().re - 1.0).abs() <= 1e-10);
        prop_assert!(out.matrix().is_hermitian(1e-12));
        prop_assert!(out.eigenvalues().iter().all(|&l| l >= -1e-12));
    }
}
