//! Random instance generators shared by the test suites and the `check` command.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;

use crate::mdp::{PolicyStack, StochasticPolicy, TabularMdp, ValueFunction};
use crate::softmax::Logits;

fn dirichlet_row<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Dense random MDP: Dirichlet(1) transition rows, rewards uniform on
/// `[−1, 1]` with `R* = 1`, and an initial distribution whose entries are
/// within a factor 3 of each other.
pub fn random_mdp<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
) -> TabularMdp {
    let mut p = Array3::zeros((n_states, n_actions, n_states));
    for s in 0..n_states {
        for a in 0..n_actions {
            for (next, w) in dirichlet_row(rng, n_states).into_iter().enumerate() {
                p[[s, a, next]] = w;
            }
        }
    }
    let r = Array2::from_shape_fn((n_states, n_actions), |_| rng.random_range(-1.0..=1.0));
    let raw: Vec<f64> = (0..n_states).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let mu = Array1::from_iter(raw.into_iter().map(|x| x / total));
    TabularMdp::new(p, r, gamma, mu, 1.0).expect("generator respects MDP invariants")
}

pub fn random_policy<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
) -> StochasticPolicy {
    let mut probs = Array2::zeros((n_states, n_actions));
    for s in 0..n_states {
        for (a, w) in dirichlet_row(rng, n_actions).into_iter().enumerate() {
            probs[[s, a]] = w;
        }
    }
    StochasticPolicy::from_probs_unchecked(probs)
}

pub fn random_stack<R: Rng + ?Sized>(rng: &mut R, mdp: &TabularMdp, len: usize) -> PolicyStack {
    PolicyStack::from_policies(
        (0..len)
            .map(|_| random_policy(rng, mdp.n_states(), mdp.n_actions()))
            .collect(),
    )
}

pub fn random_value<R: Rng + ?Sized>(rng: &mut R, n_states: usize, scale: f64) -> ValueFunction {
    ValueFunction::new(Array1::from_shape_fn(n_states, |_| {
        rng.random_range(-scale..=scale)
    }))
    .expect("finite")
}

pub fn random_logits<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    scale: f64,
) -> Logits {
    Logits::new(Array2::from_shape_fn((n_states, n_actions), |_| {
        rng.random_range(-scale..=scale)
    }))
    .expect("finite")
}
