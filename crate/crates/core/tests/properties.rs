mod common;

use common::*;
use dynpg::diagnostics::lagrange_schedule;
use dynpg::io::{mdp_from_json, mdp_to_json};
use dynpg::random::random_mdp;
use dynpg::rng::RngSeed;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn identities_hold(seed in any::<u64>()) {
        for (name, violation, tol) in identity_case(seed) {
            prop_assert!(violation <= tol, "{name}: {violation:e} > {tol:e}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn dynac_follows_dynpg_in_exact_mode(seed in any::<u64>()) {
        let gap = dynac_dynpg_gap(seed);
        prop_assert!(gap <= 1e-9, "{gap:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn lagrange_solution_saturates_and_is_optimal(
        pairs in prop::collection::vec((0.01f64..10.0, 0.01f64..10.0), 1..12),
        d in 0.01f64..5.0,
        tilt in 0.5f64..2.0,
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (c, minimum) = lagrange_schedule(&a, &b, d).unwrap();
        let used: f64 = b.iter().zip(&c).map(|(x, y)| x * y).sum();
        prop_assert!((used - d).abs() <= 1e-12 * d.max(1.0));
        let objective = |c: &[f64]| a.iter().zip(c).map(|(x, y)| x / y).sum::<f64>();
        prop_assert!((objective(&c) - minimum).abs() <= 1e-9 * minimum);
        if c.len() > 1 {
            let mut other = c.clone();
            other[0] *= tilt;
            let used: f64 = b.iter().zip(&other).map(|(x, y)| x * y).sum();
            let other: Vec<f64> = other.iter().map(|x| x * d / used).collect();
            prop_assert!(objective(&other) >= minimum * (1.0 - 1e-12));
        }
    }

    #[test]
    fn mdp_json_round_trips(seed in any::<u64>(), ns in 1usize..6, na in 1usize..5) {
        let mdp = random_mdp(&mut RngSeed::new(seed).rng(), ns, na, 0.9);
        prop_assert_eq!(mdp_from_json(&mdp_to_json(&mdp)).unwrap(), mdp);
    }
}
