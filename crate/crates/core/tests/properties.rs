use proptest::prelude::*;

use seqfill::constraints::ConstraintSpec;
use seqfill::mixture::{Covariance, GaussianMixture, IndexSplit};
use seqfill::modes::{density_gradient, find_all_modes};
use seqfill::reconstruct::*;

fn mixture() -> impl Strategy<Value = GaussianMixture> {
    (1usize..4, 1usize..5).prop_flat_map(|(d, k)| {
        (
            prop::collection::vec(0.1f64..1.0, k),
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), k),
            prop::collection::vec(prop::collection::vec(0.2f64..1.5, d), k),
        )
            .prop_map(|(w, m, v)| {
                let total: f64 = w.iter().sum();
                let w = w.iter().map(|x| x / total).collect();
                GaussianMixture::new(w, m, Covariance::Diagonal(v)).unwrap()
            })
    })
}

fn sequence(dim: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<bool>>)> {
    (1usize..7).prop_flat_map(move |n| {
        (
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), n),
            prop::collection::vec(prop::collection::vec(any::<bool>(), dim), n),
        )
    })
}

fn layers() -> impl Strategy<Value = CandidateSet> {
    prop::collection::vec(prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 2), 1..4), 1..7)
        .prop_map(|l| CandidateSet::from_points(l).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_method_keeps_present_cells(
        (gm, (values, mask)) in mixture().prop_flat_map(|gm| { let d = gm.dim(); (Just(gm), sequence(d)) }),
        method in prop::sample::select(Method::NAMES.to_vec()),
    ) {
        let seq = MaskedSequence::from_truth(&values, &mask).unwrap();
        let spec = ConstraintSpec::default();
        let method = Method::parse(method, 5, 3).unwrap();
        let out = reconstruct(&gm, &seq, &method, &spec, Some(&values), &ReconstructOptions::default()).unwrap();
        for (n, row) in out.values.iter().enumerate() {
            for (d, v) in row.iter().enumerate() {
                prop_assert!(v.is_finite());
                if mask[n][d] {
                    prop_assert_eq!(v.to_bits(), values[n][d].to_bits());
                }
            }
        }
        prop_assert_eq!(out.diagnostics.steps.len(), values.len());
    }

    #[test]
    fn dp_is_no_worse_than_greedy_or_any_sampled_path(cands in layers(), picks in prop::collection::vec(any::<prop::sample::Index>(), 7)) {
        let spec = ConstraintSpec::default();
        let bound = cands.bind(&spec, None).unwrap();
        let dp = dp_reconstruct(&cands, &bound);
        let greedy = greedy_reconstruct(&cands, &bound, StartLayer::Auto).unwrap();
        prop_assert!(dp.cost <= greedy.cost);
        let path: Vec<usize> = cands.sizes().iter().zip(&picks).map(|(&nu, p)| p.index(nu)).collect();
        prop_assert!(dp.cost <= cands.path_cost(&bound, &path));
        prop_assert_eq!(dp.cost, cands.path_cost(&bound, &dp.path));
    }

    #[test]
    fn dp_cost_is_direction_independent(cands in layers()) {
        let spec = ConstraintSpec::default();
        let forward = dp_reconstruct(&cands, &cands.bind(&spec, None).unwrap());
        let rev = cands.reversed();
        let backward = dp_reconstruct(&rev, &rev.bind(&spec, None).unwrap());
        prop_assert!((forward.cost - backward.cost).abs() <= 1e-12 * forward.cost.max(1.0));
    }

    #[test]
    fn modes_are_sorted_stationary_points(gm in mixture()) {
        let found = find_all_modes(&gm);
        prop_assert!(!found.is_empty());
        for w in found.modes.windows(2) {
            prop_assert!(w[0].log_density >= w[1].log_density);
        }
        for m in &found.modes {
            let g = density_gradient(&gm, &m.point);
            let p = gm.density(&m.point).unwrap();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm / p < 1e-5, "relative gradient {}", norm / p);
        }
    }

    #[test]
    fn conditional_is_a_normalised_mixture(gm in mixture(), probe in prop::collection::vec(-3.0f64..3.0, 3)) {
        prop_assume!(gm.dim() >= 2);
        let split = IndexSplit::new(vec![0], (1..gm.dim()).collect()).unwrap();
        let cond = gm.condition(&split, &probe[..1]).unwrap();
        prop_assert_eq!(cond.dim(), gm.dim() - 1);
        prop_assert!((cond.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
