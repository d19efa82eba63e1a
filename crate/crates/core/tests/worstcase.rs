mod common;

use proptest::prelude::*;
use robust_conformal::rng;
use robust_conformal::worstcase::{
    causal_cdf_under, causal_witness, lp_oracle_marginal, worst_cdf_causal, worst_cdf_marginal,
    worst_witness_marginal, Atom, MarginalJoint,
};

/// Vertex enumeration: an optimal solution has every weight at a bound
/// except possibly one, which absorbs the mean-one constraint.
fn brute_force(d: &MarginalJoint, t: f64) -> f64 {
    let atoms = d.atoms();
    let k = atoms.len();
    let mut best = f64::INFINITY;
    for free in 0..k {
        for mask in 0u32..(1 << k) {
            let mut w: Vec<f64> = (0..k)
                .map(|i| {
                    if mask >> i & 1 == 1 {
                        atoms[i].upper
                    } else {
                        atoms[i].lower
                    }
                })
                .collect();
            let rest: f64 = (0..k)
                .filter(|&i| i != free)
                .map(|i| atoms[i].mass * w[i])
                .sum();
            w[free] = (1.0 - rest) / atoms[free].mass;
            let slack = 1e-12 * atoms[free].upper;
            if w[free] < atoms[free].lower - slack || w[free] > atoms[free].upper + slack {
                continue;
            }
            best = best.min(d.cdf_under(&w, t));
        }
    }
    best
}

#[test]
fn closed_form_matches_vertex_enumeration() {
    let mut g = rng::seeded(11);
    for _ in 0..200 {
        let d = common::random_marginal(&mut g, 7);
        for t in d.grid() {
            let closed = worst_cdf_marginal(&d, t);
            assert!((closed - brute_force(&d, t)).abs() < 1e-9, "t = {t}");
        }
    }
}

#[test]
fn cdf_between_grid_points_is_flat() {
    let d = MarginalJoint::new(vec![
        Atom {
            score: 0.0,
            mass: 0.5,
            lower: 0.5,
            upper: 2.0,
        },
        Atom {
            score: 1.0,
            mass: 0.5,
            lower: 0.5,
            upper: 2.0,
        },
    ])
    .unwrap();
    assert_eq!(worst_cdf_marginal(&d, -1.0), 0.0);
    assert_eq!(worst_cdf_marginal(&d, 0.5), worst_cdf_marginal(&d, 0.0));
    assert_eq!(worst_cdf_marginal(&d, 7.0), 1.0);
}

#[test]
fn infeasible_bounds_are_rejected() {
    let atom = |lower, upper| Atom {
        score: 0.0,
        mass: 1.0,
        lower,
        upper,
    };
    assert!(MarginalJoint::new(vec![atom(1.5, 2.0)]).is_err());
    assert!(MarginalJoint::new(vec![atom(0.2, 0.9)]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn witness_attains_worst_case(seed in any::<u64>()) {
        let d = common::random_marginal(&mut rng::seeded(seed), 20);
        let w = worst_witness_marginal(&d);
        for t in d.grid() {
            let f = worst_cdf_marginal(&d, t);
            prop_assert!((d.cdf_under(&w.w, t) - f).abs() < 1e-12);
            prop_assert!((lp_oracle_marginal(&d, t).0 - f).abs() < 1e-12);
        }
    }

    #[test]
    fn worst_cdf_is_a_cdf(seed in any::<u64>()) {
        let d = common::random_marginal(&mut rng::seeded(seed), 20);
        let f: Vec<f64> = d.grid().iter().map(|&t| worst_cdf_marginal(&d, t)).collect();
        prop_assert!(f.windows(2).all(|p| p[0] <= p[1] + 1e-15));
        prop_assert!((f.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn causal_witness_is_feasible_and_dominates(seed in any::<u64>()) {
        let d = common::random_causal(&mut rng::seeded(seed), 5, 6);
        let witness = causal_witness(&d).unwrap();
        let mut total = 0.0;
        for (g, w) in d.groups().iter().zip(&witness) {
            let conditional: f64 = g.atoms.iter().zip(&w.w).map(|((_, m), w)| m * w).sum();
            prop_assert!((conditional - g.shift).abs() < 1e-9);
            total += g.mass * conditional;
        }
        prop_assert!((total - 1.0).abs() < 1e-9);
        let marginal = d.to_marginal().unwrap();
        for t in d.grid() {
            let c = worst_cdf_causal(&d, t).unwrap();
            prop_assert!((c - causal_cdf_under(&d, &witness, t)).abs() < 1e-12);
            prop_assert!(c >= worst_cdf_marginal(&marginal, t) - 1e-12);
        }
    }
}
