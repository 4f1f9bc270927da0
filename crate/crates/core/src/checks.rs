//! Randomized invariant suite run by the `check` command.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::baselines::exact_inf_gradient;
use crate::diagnostics::{decompose_with_reference, lagrange_schedule, reference_value, BOUND_SLACK};
use crate::dynac::{critic_init, critic_update};
use crate::error::Result;
use crate::exact::{dynpg_adaptive, step_size, train_head, EpochOptions, EpochRule};
use crate::mdp::{
    advantage, bellman_expect, bellman_optimal, evaluate_stack, evaluate_stationary_inf, greedy_policy,
    q_from_value, value_iteration, PolicyStack, StochasticPolicy, TabularMdp, Termination,
};
use crate::random::{random_logits, random_policy, random_stack, random_value};
use crate::rng::RngSeed;
use crate::softmax::{exact_epoch_gradient, softmax, BanditObjective, Logits};

/// Outcome of one named check: the worst observed violation measure against its tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
}

struct Suite {
    outcomes: Vec<CheckOutcome>,
}

impl Suite {
    fn record(&mut self, name: &str, worst: f64, tolerance: f64) {
        self.outcomes.push(CheckOutcome {
            name: name.to_string(),
            passed: worst <= tolerance,
            worst,
            tolerance,
        });
    }
}

const FD_STEP: f64 = 1e-5;

fn central_difference(theta: &Logits, f: impl Fn(&Logits) -> Result<f64>) -> Result<Array2<f64>> {
    let base = theta.values();
    let mut out = Array2::zeros(base.dim());
    for ((s, a), g) in out.indexed_iter_mut() {
        let mut plus = base.clone();
        plus[[s, a]] += FD_STEP;
        let mut minus = base.clone();
        minus[[s, a]] -= FD_STEP;
        *g = (f(&Logits::new(plus)?)? - f(&Logits::new(minus)?)?) / (2.0 * FD_STEP);
    }
    Ok(out)
}

fn sup(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn relative_error(got: &Array2<f64>, want: &Array2<f64>) -> f64 {
    sup(&(got - want)) / sup(want).max(1e-3)
}

/// Runs every invariant `cases` times on `mdp` with random values, policies,
/// stacks and logits drawn from `seed`.
pub fn run_checks(mdp: &TabularMdp, seed: RngSeed, cases: usize) -> Result<Vec<CheckOutcome>> {
    let mut rng = seed.rng();
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let scale = mdp.reward_bound() / (1.0 - gamma);
    let v_star = reference_value(mdp)?;
    let mut suite = Suite { outcomes: Vec::new() };

    let mut contraction = 0.0f64;
    let mut greedy = 0.0f64;
    let mut perf_diff = 0.0f64;
    let mut stationary = 0.0f64;
    let mut epoch_grad = 0.0f64;
    let mut inf_grad = 0.0f64;
    let mut critic = 0.0f64;
    let mut decomposition = 0.0f64;
    for _ in 0..cases {
        let v = random_value(&mut rng, ns, scale);
        let g = random_value(&mut rng, ns, scale);
        let pi = random_policy(&mut rng, ns, na);
        let dist = v.sup_dist(&g);
        let opt = bellman_optimal(mdp, &v)?.sup_dist(&bellman_optimal(mdp, &g)?);
        let exp = bellman_expect(mdp, &v, &pi)?.sup_dist(&bellman_expect(mdp, &g, &pi)?);
        contraction = contraction.max(opt - gamma * dist).max(exp - gamma * dist);

        let greedy_pi = greedy_policy(mdp, &v)?;
        greedy = greedy.max(bellman_expect(mdp, &v, &greedy_pi)?.sup_dist(&bellman_optimal(mdp, &v)?));

        let stack = random_stack(&mut rng, mdp, 2);
        let other = random_policy(&mut rng, ns, na);
        let mut with_pi = stack.clone();
        with_pi.push_front(pi.clone());
        let mut with_other = stack.clone();
        with_other.push_front(other.clone());
        let diff = evaluate_stack(mdp, &with_pi)?.values() - evaluate_stack(mdp, &with_other)?.values();
        let adv = advantage(mdp, &stack, &other)?;
        for s in 0..ns {
            let expected: f64 = (0..na).map(|a| pi.prob(s, a) * adv.at(s, a)).sum();
            perf_diff = perf_diff.max((diff[s] - expected).abs());
        }

        let v_pi = evaluate_stationary_inf(mdp, &pi)?;
        let bound = bellman_expect(mdp, &v, &pi)?.sup_dist(&v) / (1.0 - gamma);
        stationary = stationary.max(v.sup_dist(&v_pi) - bound);

        let theta = random_logits(&mut rng, ns, na, 2.0);
        let mu = mdp.init_dist();
        let analytic = exact_epoch_gradient(mdp, &theta, &stack)?;
        let numeric = central_difference(&theta, |t| {
            let mut s = stack.clone();
            s.push_front(softmax(t)?);
            Ok(evaluate_stack(mdp, &s)?.expectation(mu))
        })?;
        epoch_grad = epoch_grad.max(relative_error(&analytic, &numeric));
        let analytic = exact_inf_gradient(mdp, &theta)?;
        let numeric = central_difference(&theta, |t| Ok(evaluate_stationary_inf(mdp, &softmax(t)?)?.expectation(mu)))?;
        inf_grad = inf_grad.max(relative_error(&analytic, &numeric));

        let mut table = critic_init(mdp);
        for policy in stack.policies().iter().rev() {
            table = critic_update(mdp, &table, policy)?;
        }
        let q = q_from_value(mdp, &evaluate_stack(mdp, &stack)?)?;
        critic = critic.max(sup(&(table.values() - q.values())));

        let breakdown = decompose_with_reference(mdp, &with_pi, &v_star)?;
        decomposition = decomposition
            .max(breakdown.true_value_error - breakdown.value_error_bound())
            .max(breakdown.true_overall_error - breakdown.overall_error_bound());
    }
    suite.record("contraction", contraction, 1e-12);
    suite.record("greedy_identity", greedy, 1e-12);
    suite.record("performance_difference", perf_diff, 1e-10);
    suite.record("stationary_bound", stationary, 1e-9);
    suite.record("epoch_gradient_finite_difference", epoch_grad, 1e-6);
    suite.record("inf_gradient_finite_difference", inf_grad, 1e-6);
    suite.record("critic_exactness", critic, 1e-10);
    suite.record("decomposition_bounds_random", decomposition, BOUND_SLACK);

    let mut truncation = 0.0f64;
    for h in 0..=50 {
        let (v_h, _) = value_iteration(mdp, Termination::Horizon(h))?;
        let bound = gamma.powi(h as i32) * mdp.reward_bound() / (1.0 - gamma);
        truncation = truncation.max(v_star.sup_dist(&v_h) - bound);
    }
    suite.record("truncation_bound", truncation, BOUND_SLACK);

    let run = dynpg_adaptive(
        mdp,
        1e-3,
        |h| EpochRule {
            step_size: step_size(gamma, mdp.reward_bound(), h),
            grad_steps: 200,
        },
        20,
    )?;
    let mut floor = 0.0f64;
    let mut stack = PolicyStack::new();
    for pi in run.stack.policies().iter().rev() {
        let objective = BanditObjective::from_stack(mdp, &stack)?;
        let trained = train_head(
            &objective,
            &EpochOptions {
                step_size: step_size(gamma, mdp.reward_bound(), stack.len()),
                max_steps: 200,
                stop_at: None,
            },
        )?;
        floor = floor.max(1.0 / na as f64 - trained.min_optimal_prob);
        stack.push_front(pi.clone());
    }
    suite.record("optimal_action_floor", floor, 1e-12);
    let decomposition = if run.stack.is_empty() {
        0.0
    } else {
        let b = decompose_with_reference(mdp, &run.stack, &v_star)?;
        (b.true_value_error - b.value_error_bound()).max(b.true_overall_error - b.overall_error_bound())
    };
    suite.record("decomposition_bounds_dynpg", decomposition, BOUND_SLACK);

    let horizon = 12usize;
    let a: Vec<f64> = (0..horizon).map(|h| 1.0 - gamma.powi(h as i32 + 1)).collect();
    let b: Vec<f64> = (0..horizon).map(|h| gamma.powi((horizon - h - 1) as i32)).collect();
    let (c, _) = lagrange_schedule(&a, &b, 0.1)?;
    let used: f64 = b.iter().zip(&c).map(|(b, c)| b * c).sum();
    suite.record("lagrange_saturation", (used - 0.1).abs(), 1e-12);

    let uniform = StochasticPolicy::uniform(ns, na);
    let floor_uniform = BanditObjective::from_stack(mdp, &PolicyStack::new())?.min_optimal_prob(&uniform);
    suite.record("uniform_floor", (1.0 / na as f64 - floor_uniform).abs(), 1e-15);
    Ok(suite.outcomes)
}
