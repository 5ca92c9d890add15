use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seqpen::tasks::qp::{build_analytic_qp, QpSpec, WeightedSplit};
use seqpen::{
    full_objective, multiplier_estimate, penalty_value_full, FiniteSumProblem, Minibatch, PenaltyKind, PenaltySpec,
};

fn kind() -> impl Strategy<Value = PenaltyKind> {
    prop_oneof![Just(PenaltyKind::Quadratic), Just(PenaltyKind::Linear)]
}

/// Random diagonal QP with `m` constraints.
fn qp_spec(n: usize, m: usize) -> impl Strategy<Value = QpSpec> {
    (
        prop::collection::vec(0.5f64..4.0, n),
        prop::collection::vec(-2.0f64..2.0, n),
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, n), m),
        prop::collection::vec(-1.0f64..1.0, m),
    )
        .prop_map(move |(d, b, a, c)| QpSpec {
            q: (0..n)
                .map(|i| (0..n).map(|k| if i == k { d[i] } else { 0.0 }).collect())
                .collect(),
            b,
            r: 0.0,
            a,
            c,
        })
}

proptest! {
    #[test]
    fn term_is_zero_exactly_on_the_feasible_side(g in -10.0f64..10.0, tau in 1e-3f64..1e3, k in kind()) {
        let spec = PenaltySpec::new(k, tau).unwrap();
        let t = spec.term(g);
        prop_assert!(t >= 0.0);
        prop_assert_eq!(t == 0.0, g <= 0.0);
        prop_assert!(spec.term_slope(g) >= 0.0);
    }

    #[test]
    fn term_slope_matches_differences(g in 1e-3f64..10.0, tau in 1e-3f64..1e3, k in kind()) {
        let spec = PenaltySpec::new(k, tau).unwrap();
        let h = 1e-7 * g.max(1e-2);
        let fd = (spec.term(g + h) - spec.term(g - h)) / (2.0 * h);
        prop_assert!((fd - spec.term_slope(g)).abs() <= 1e-5 * spec.term_slope(g).max(1.0));
    }

    #[test]
    fn epoch_partition_covers_each_sample_once(n in 1usize..300, b in 1usize..64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batches = Minibatch::epoch_partition(n, b, &mut rng);
        let mut seen = vec![0u32; n];
        for batch in &batches {
            prop_assert!(!batch.is_empty() && batch.len() <= b);
            for &j in batch.indices() {
                seen[j] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert_eq!(batches.len(), n.div_ceil(b));
    }

    #[test]
    fn minibatch_draw_is_distinct(n in 1usize..200, size in 1usize..250, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = Minibatch::draw(n, size, &mut rng);
        prop_assert_eq!(batch.len(), size.min(n));
        prop_assert!(Minibatch::new(batch.indices().to_vec(), n).is_ok());
    }

    #[test]
    fn weighted_split_keeps_the_quadratic_penalty(
        spec in qp_spec(2, 2),
        w in prop::collection::vec(0.05f64..1.0, 1..6),
        x in prop::collection::vec(-3.0f64..3.0, 2),
        tau in 1e-2f64..1e2,
    ) {
        // an infeasible random QP has nothing to split
        let Ok(qp) = build_analytic_qp(&spec) else { return Ok(()) };
        let split = WeightedSplit::new(qp.clone(), &w).unwrap();
        let pen = PenaltySpec::new(PenaltyKind::Quadratic, tau).unwrap();
        let a = penalty_value_full(&qp, &pen, &x).unwrap();
        let b = penalty_value_full(&split, &pen, &x).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{} vs {}", a, b);
        prop_assert!((full_objective(&qp, &x).unwrap() - full_objective(&split, &x).unwrap()).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn analytic_solution_beats_feasible_points(
        spec in qp_spec(3, 3),
        points in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 30),
    ) {
        let Ok(qp) = build_analytic_qp(&spec) else { return Ok(()) };
        let best = full_objective(&qp, qp.x_star()).unwrap();
        for p in &points {
            if qp.sample_constraints(0, p).iter().all(|&g| g <= 0.0) {
                prop_assert!(full_objective(&qp, p).unwrap() >= best - 1e-9);
            }
        }
        prop_assert!(qp.lambda_star().iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn multiplier_estimates_are_nonnegative(
        spec in qp_spec(2, 3),
        x in prop::collection::vec(-3.0f64..3.0, 2),
        tau in 1e-2f64..1e3,
        k in kind(),
    ) {
        let Ok(qp) = build_analytic_qp(&spec) else { return Ok(()) };
        let lam = multiplier_estimate(&qp, &PenaltySpec::new(k, tau).unwrap(), &x).unwrap();
        prop_assert!(lam.lambdas().iter().all(|&l| l >= 0.0));
        let g = qp.sample_constraints(0, &x);
        for (i, &gi) in g.iter().enumerate() {
            if gi < 0.0 {
                prop_assert_eq!(lam.get(0, i), 0.0);
            }
        }
    }
}
