//! Stationary policy-gradient baselines: exact-gradient softmax PG and
//! truncated REINFORCE.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::mdp::{advantage_from_q, evaluate_stationary_inf, q_from_value, StochasticPolicy, TabularMdp};
use crate::rng::RngSeed;
use crate::softmax::{softmax, softmax_row_into, Logits};
use crate::stochastic::{sample_index, sample_next, sample_reward};
use crate::track::{RunControl, Snapshot, Tracker};

/// Truncation horizon of the benchmark's REINFORCE runs.
pub const REINFORCE_TRUNCATION: usize = 3;

/// `η = 2(1−γ)/(1−γ⁶)`, the tuned stationary step size of the benchmark.
pub fn benchmark_step_size(gamma: f64) -> f64 {
    2.0 * (1.0 - gamma) / (1.0 - gamma.powi(6))
}

/// Unnormalised discounted occupancy `μᵀ(I − γP_π)⁻¹`; it sums to `1/(1−γ)`.
pub fn discounted_occupancy(mdp: &TabularMdp, pi: &StochasticPolicy) -> Result<Array1<f64>> {
    let n = mdp.n_states();
    let p = mdp.policy_transition_matrix(pi);
    let system = DMatrix::identity(n, n) - p.transpose() * mdp.gamma();
    let rhs = DVector::from_iterator(n, mdp.init_dist().iter().copied());
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("occupancy system is singular".into()))?;
    Ok(solution.iter().copied().collect())
}

fn check_logits(mdp: &TabularMdp, theta: &Logits) -> Result<()> {
    if (theta.n_states(), theta.n_actions()) != (mdp.n_states(), mdp.n_actions()) {
        return Err(Error::Shape(format!(
            "logits have shape ({}, {}), MDP has ({}, {})",
            theta.n_states(),
            theta.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

/// `∇_θ V_∞^{π_θ}(μ)`: entry `(s, a)` is `[μᵀ(I−γP)⁻¹](s) π_θ(a|s) A_∞(s, a)`.
pub fn exact_inf_gradient(mdp: &TabularMdp, theta: &Logits) -> Result<Array2<f64>> {
    check_logits(mdp, theta)?;
    let pi = softmax(theta)?;
    let v = evaluate_stationary_inf(mdp, &pi)?;
    let q = q_from_value(mdp, &v)?;
    let adv = advantage_from_q(q.values(), &pi);
    let occupancy = discounted_occupancy(mdp, &pi)?;
    Ok(Array2::from_shape_fn(adv.dim(), |(s, a)| {
        occupancy[s] * pi.prob(s, a) * adv[[s, a]]
    }))
}

/// Result of exact-gradient vanilla PG.
#[derive(Debug, Clone)]
pub struct PgOutcome {
    pub theta: Logits,
    pub policy: StochasticPolicy,
    /// `V_∞^{π_{θ_n}}(μ)` for `n = 0..=n_steps`.
    pub values: Vec<f64>,
}

/// `n_steps` updates `θ ← θ + η ∇V_∞^{π_θ}(μ)` from `θ_0 = 0`.
pub fn vanilla_pg(mdp: &TabularMdp, eta: f64, n_steps: u64) -> Result<PgOutcome> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Input(format!("step size must be positive, got {eta}")));
    }
    let mut theta = Logits::zeros(mdp.n_states(), mdp.n_actions());
    let mut values = Vec::with_capacity(n_steps as usize + 1);
    let mu = mdp.init_dist();
    values.push(evaluate_stationary_inf(mdp, &softmax(&theta)?)?.expectation(mu));
    for _ in 0..n_steps {
        let grad = exact_inf_gradient(mdp, &theta)?;
        theta.ascend(eta, &grad)?;
        values.push(evaluate_stationary_inf(mdp, &softmax(&theta)?)?.expectation(mu));
    }
    let policy = softmax(&theta)?;
    Ok(PgOutcome {
        theta,
        policy,
        values,
    })
}

/// Result of a tracked vanilla PG run.
#[derive(Debug, Clone)]
pub struct PgRun {
    pub theta: Logits,
    pub policy: StochasticPolicy,
    pub snapshots: Vec<Snapshot>,
    pub interactions: u64,
}

/// [`vanilla_pg`] charged one interaction per update, with a budget and snapshots.
pub fn vanilla_pg_run(mdp: &TabularMdp, eta: f64, n_steps: u64, control: &RunControl) -> Result<PgRun> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Input(format!("step size must be positive, got {eta}")));
    }
    let mut tracker = Tracker::new(&control.checkpoints)?;
    let mut theta = Logits::zeros(mdp.n_states(), mdp.n_actions());
    let mut used = 0u64;
    for _ in 0..n_steps {
        if control.budget.is_some_and(|b| used + 1 > b) {
            break;
        }
        let policy = softmax(&theta)?;
        tracker.before_spend(used, 1, || policy);
        let grad = exact_inf_gradient(mdp, &theta)?;
        theta.ascend(eta, &grad)?;
        used += 1;
    }
    let policy = softmax(&theta)?;
    let snapshots = tracker.finish(&policy);
    Ok(PgRun {
        theta,
        policy,
        snapshots,
        interactions: used,
    })
}

/// Result of a REINFORCE run.
#[derive(Debug, Clone)]
pub struct ReinforceOutcome {
    pub theta: Logits,
    pub policy: StochasticPolicy,
    /// Realized length of every episode used for an update.
    pub episode_lengths: Vec<u64>,
    pub interactions: u64,
    pub snapshots: Vec<Snapshot>,
    /// True when the run stopped because the next episode would exceed the budget.
    pub budget_exhausted: bool,
}

/// Softmax policy of raw logits.
fn policy_of(theta: &Array2<f64>) -> StochasticPolicy {
    let mut probs = Array2::zeros(theta.dim());
    let mut buf = vec![0.0; theta.ncols()];
    for (row, mut out) in theta.rows().into_iter().zip(probs.rows_mut()) {
        softmax_row_into(row.as_slice().expect("row-major logits"), &mut buf);
        out.assign(&ArrayView1::from(&buf[..]));
    }
    StochasticPolicy::from_probs_unchecked(probs)
}

#[derive(Debug, Clone, Copy)]
struct Visit {
    state: usize,
    action: usize,
    reward: f64,
}

/// REINFORCE with one episode per update, truncated after `truncation` steps.
pub fn reinforce(
    mdp: &TabularMdp,
    eta: f64,
    n_steps: u64,
    truncation: usize,
    seed: RngSeed,
) -> Result<ReinforceOutcome> {
    reinforce_run(mdp, eta, n_steps, truncation, seed, &RunControl::default())
}

/// [`reinforce`] with an interaction budget and snapshots of the current policy.
///
/// Episode `n` draws from substream `(0, n, 0)` of `seed`; it ends at an
/// absorbing state or after `truncation` steps. The update is
/// `θ ← θ + η Σ_t ∇log π_θ(a_t|s_t) Σ_{k≥t} γ^k r_k`.
pub fn reinforce_run(
    mdp: &TabularMdp,
    eta: f64,
    n_steps: u64,
    truncation: usize,
    seed: RngSeed,
    control: &RunControl,
) -> Result<ReinforceOutcome> {
    if truncation == 0 {
        return Err(Error::Input("truncation must be at least 1".into()));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Input(format!("step size must be positive, got {eta}")));
    }
    let gamma = mdp.gamma();
    let n_actions = mdp.n_actions();
    let mut tracker = Tracker::new(&control.checkpoints)?;
    let mut theta = Array2::<f64>::zeros((mdp.n_states(), n_actions));
    let mut lengths = Vec::new();
    let mut used = 0u64;
    let mut exhausted = false;
    let mut episode: Vec<Visit> = Vec::with_capacity(truncation);
    let mut row_probs = vec![vec![0.0; n_actions]; truncation];
    let mut returns = vec![0.0; truncation];

    for n in 0..n_steps {
        let mut rng = seed.substream(0, n, 0);
        episode.clear();
        let mut s = sample_index(&mut rng, mdp.init_dist().view());
        for t in 0..truncation {
            if mdp.is_absorbing(s) {
                break;
            }
            let probs = &mut row_probs[t];
            softmax_row_into(theta.row(s).as_slice().expect("row-major logits"), probs);
            let a = sample_index(&mut rng, ArrayView1::from(&probs[..]));
            let reward = sample_reward(mdp, s, a, &mut rng);
            episode.push(Visit {
                state: s,
                action: a,
                reward,
            });
            if t + 1 < truncation {
                s = sample_next(mdp, s, a, &mut rng);
            }
        }
        let cost = episode.len() as u64;
        if control.budget.is_some_and(|b| used + cost > b) {
            exhausted = true;
            break;
        }
        tracker.before_spend(used, cost, || policy_of(&theta));

        let mut tail = 0.0;
        for t in (0..episode.len()).rev() {
            tail += gamma.powi(t as i32) * episode[t].reward;
            returns[t] = tail;
        }
        for ((visit, probs), g) in episode.iter().zip(&row_probs).zip(&returns) {
            let w = eta * g;
            if w == 0.0 {
                continue;
            }
            for (b, th) in theta.row_mut(visit.state).iter_mut().enumerate() {
                let indicator = if b == visit.action { 1.0 } else { 0.0 };
                *th += w * (indicator - probs[b]);
            }
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("REINFORCE produced non-finite logits".into()));
        }
        used += cost;
        lengths.push(cost);
    }
    let policy = policy_of(&theta);
    let snapshots = tracker.finish(&policy);
    Ok(ReinforceOutcome {
        theta: Logits::from_raw(theta),
        policy,
        episode_lengths: lengths,
        interactions: used,
        snapshots,
        budget_exhausted: exhausted,
    })
}
