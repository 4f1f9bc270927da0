mod common;

use common::*;
use dynpg::bench::{build_appendix_b_mdp, checkpoint_grid, Algorithm, BENCH_ACTIONS, BENCH_STATES};
use dynpg::diagnostics::reference_value;

#[test]
fn benchmark_shape_and_optimum() {
    let mdp = build_appendix_b_mdp();
    assert_eq!((mdp.n_states(), mdp.n_actions()), (BENCH_STATES, BENCH_ACTIONS));
    let v = reference_value(&mdp).unwrap();
    assert!((v.at(4) - 2.4875).abs() < 1e-8);
    for terminal in [0, 3, 6] {
        assert_eq!(v.at(terminal), 0.0);
    }
}

#[test]
fn checkpoints_end_at_budget() {
    let grid = checkpoint_grid(3000);
    assert_eq!(grid.first(), Some(&10));
    assert_eq!(grid.last(), Some(&3000));
    assert!(grid.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn dynpg_beats_reinforce_on_minimum_trials() {
    for gamma in [0.99, 0.9] {
        let dynpg = benchmark_curve(Algorithm::DynpgStochastic, gamma, 200, 0).terminal();
        let reinforce = benchmark_curve(Algorithm::Reinforce, gamma, 200, 0).terminal();
        assert!(dynpg.success_prob > reinforce.success_prob, "{gamma}: {dynpg:?} vs {reinforce:?}");
        assert!(reinforce.success_prob <= 0.9, "{gamma}: {reinforce:?}");
    }
}
