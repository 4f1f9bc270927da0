//! Sample-based DynPG: trajectory simulation, the score-function gradient
//! estimator and the stochastic schedules.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{
    horizon_overall_error, horizon_value_error, optimal_epoch_eps, DynPgOutcome, EpochReport, TrackedRun,
};
use crate::mdp::{q_from_value, PolicyStack, StochasticPolicy, TabularMdp, ValueFunction};
use crate::rng::RngSeed;
use crate::softmax::{softmax, softmax_row_into, BanditObjective, Logits};
use crate::track::{RunControl, Tracker};

/// Default cap on the total number of sampled interactions a schedule may ask for.
pub const DEFAULT_SAMPLE_CAP: f64 = 1e9;

/// One simulated transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

/// `(s_k, a_k, r_k)` for `k = 0..=h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `Σ_k γ^k r_k`.
    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut discount = 1.0;
        let mut total = 0.0;
        for step in &self.steps {
            total += discount * step.reward;
            discount *= gamma;
        }
        total
    }
}

/// Index drawn from a probability vector by inversion.
pub(crate) fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: ArrayView1<f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Realized reward: the mean, plus Gaussian noise where the MDP has any.
pub(crate) fn sample_reward<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    s: usize,
    a: usize,
    rng: &mut R,
) -> f64 {
    let mean = mdp.rewards()[[s, a]];
    match mdp.noise()[[s, a]] {
        Some(noise) => {
            let z: f64 = rng.sample(StandardNormal);
            mean + noise.std * z
        }
        None => mean,
    }
}

pub(crate) fn sample_next<R: Rng + ?Sized>(mdp: &TabularMdp, s: usize, a: usize, rng: &mut R) -> usize {
    sample_index(rng, mdp.transitions().slice(ndarray::s![s, a, ..]))
}

/// Walks `s_0 ~ μ`, `a_0 ~ head`, then `a_k` from stack element `k − 1`.
fn walk<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    head: &Array2<f64>,
    stack: &PolicyStack,
    rng: &mut R,
    mut visit: impl FnMut(Step),
) {
    let mut s = sample_index(rng, mdp.init_dist().view());
    let h = stack.len();
    for k in 0..=h {
        let probs = if k == 0 {
            head.row(s)
        } else {
            stack.policies()[k - 1].probs().row(s)
        };
        let a = sample_index(rng, probs);
        let reward = sample_reward(mdp, s, a, rng);
        visit(Step {
            state: s,
            action: a,
            reward,
        });
        if k < h {
            s = sample_next(mdp, s, a, rng);
        }
    }
}

fn check_inputs(mdp: &TabularMdp, theta: &Logits, stack: &PolicyStack) -> Result<()> {
    if (theta.n_states(), theta.n_actions()) != (mdp.n_states(), mdp.n_actions()) {
        return Err(Error::Shape(format!(
            "logits have shape ({}, {}), MDP has ({}, {})",
            theta.n_states(),
            theta.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    for pi in stack.policies() {
        if pi.probs().dim() != (mdp.n_states(), mdp.n_actions()) {
            return Err(Error::Shape("stack policy does not match the MDP".into()));
        }
    }
    Ok(())
}

/// One epoch-`h` trajectory (`h` = stack length), reproducible from `seed`.
pub fn sample_trajectory(
    mdp: &TabularMdp,
    theta: &Logits,
    stack: &PolicyStack,
    seed: RngSeed,
) -> Result<Trajectory> {
    check_inputs(mdp, theta, stack)?;
    let head = softmax(theta)?;
    let mut rng = seed.rng();
    let mut steps = Vec::with_capacity(stack.len() + 1);
    walk(mdp, head.probs(), stack, &mut rng, |step| steps.push(step));
    Ok(Trajectory { steps })
}

/// `(s_0, a_0, Q̂)` of one rollout.
fn rollout<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    head: &Array2<f64>,
    stack: &PolicyStack,
    rng: &mut R,
) -> (usize, usize, f64) {
    let gamma = mdp.gamma();
    let mut first = None;
    let mut discount = 1.0;
    let mut total = 0.0;
    walk(mdp, head, stack, rng, |step| {
        if first.is_none() {
            first = Some((step.state, step.action));
        }
        total += discount * step.reward;
        discount *= gamma;
    });
    let (s, a) = first.expect("a rollout has at least one step");
    (s, a, total)
}

/// Batches at least this large are sampled in parallel.
const PAR_BATCH: usize = 256;

/// Rollouts `i = 0..k` of gradient step `n` in epoch `h`, in index order.
fn batch_rollouts(
    mdp: &TabularMdp,
    head: &Array2<f64>,
    stack: &PolicyStack,
    k: u64,
    seed: RngSeed,
    n: u64,
) -> Vec<(usize, usize, f64)> {
    let h = stack.len() as u64;
    let one = |i: u64| rollout(mdp, head, stack, &mut seed.substream(h, n, i));
    if (k as usize) < PAR_BATCH {
        (0..k).map(one).collect()
    } else {
        (0..k).into_par_iter().map(one).collect()
    }
}

/// Adds `scale · Q̂ · ∇log π(a_0|s_0)` for each rollout to `grad`, in order.
fn accumulate_scores(
    grad: &mut Array2<f64>,
    head: &Array2<f64>,
    rollouts: &[(usize, usize, f64)],
    scale: f64,
) {
    for &(s, a, q_hat) in rollouts {
        let w = scale * q_hat;
        if w == 0.0 {
            continue;
        }
        for (b, g) in grad.row_mut(s).iter_mut().enumerate() {
            let indicator = if b == a { 1.0 } else { 0.0 };
            *g += w * (indicator - head[[s, b]]);
        }
    }
}

/// Monte-Carlo estimate `(1/K) Σ_i ∇log π_θ(a_0^i|s_0^i) Q̂^i` of the epoch gradient.
///
/// Rollout `i` uses substream `(h, 0, i)` of `seed`, `h` being the stack length.
pub fn estimate_gradient(
    mdp: &TabularMdp,
    theta: &Logits,
    stack: &PolicyStack,
    k: u64,
    seed: RngSeed,
) -> Result<Array2<f64>> {
    if k == 0 {
        return Err(Error::Input("batch size must be at least 1".into()));
    }
    check_inputs(mdp, theta, stack)?;
    let head = softmax(theta)?;
    let rollouts = batch_rollouts(mdp, head.probs(), stack, k, seed, 0);
    let mut grad = Array2::zeros((mdp.n_states(), mdp.n_actions()));
    accumulate_scores(&mut grad, head.probs(), &rollouts, 1.0 / k as f64);
    Ok(grad)
}

/// Bound `ξ_h = 5((1−γ^{h+1}) R* / (1−γ))²` on the single-sample estimator's
/// mean squared error.
pub fn variance_bound(gamma: f64, reward_bound: f64, h: usize) -> f64 {
    let scale = (1.0 - gamma.powi(h as i32 + 1)) * reward_bound / (1.0 - gamma);
    5.0 * scale * scale
}

/// How the stochastic schedule is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Step counts, step sizes and batch sizes from the high-probability analysis.
    Theoretical,
    /// `η_h = 2(1−γ)/(1−γ^{h+1})`, `N_h = ⌈45(1−γ^{h+1})/(1−γ)⌉`, `K_h = 1`.
    Practical,
    /// The practical form with other constants in place of 2 and 45.
    Custom { step_constant: f64, steps_constant: f64 },
}

/// Per-epoch settings of sample-based DynPG. Counts are stored as floats
/// because theoretical schedules routinely exceed any integer type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticSchedule {
    pub mode: ScheduleMode,
    pub horizon: usize,
    pub eps: Vec<f64>,
    pub steps: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub batch_sizes: Vec<f64>,
    pub delta: f64,
    pub delta_h: f64,
    /// `Σ_h (h+1) N_h K_h`.
    pub total_samples: f64,
    pub sample_cap: f64,
}

impl StochasticSchedule {
    pub fn epochs(&self) -> usize {
        self.steps.len()
    }

    /// Theoretical schedules are feasible up to the sample cap; the practical
    /// forms always are.
    pub fn is_feasible(&self) -> bool {
        self.mode != ScheduleMode::Theoretical || self.total_samples <= self.sample_cap
    }

    pub fn warning(&self) -> Option<String> {
        (!self.is_feasible()).then(|| {
            format!(
                "schedule needs {:.3e} interactions, above the cap of {:.3e}",
                self.total_samples, self.sample_cap
            )
        })
    }

    /// Sampled interactions of epoch `h`: `(h+1) N_h K_h`.
    pub fn epoch_samples(&self, h: usize) -> f64 {
        (h as f64 + 1.0) * self.steps[h] * self.batch_sizes[h]
    }
}

fn check_target(eps: f64, delta: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Schedule(format!("target accuracy must be positive, got {eps}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Schedule(format!("failure probability must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Stochastic schedule with the default sample cap.
pub fn stochastic_schedule(
    mdp: &TabularMdp,
    eps: f64,
    delta: f64,
    mode: ScheduleMode,
) -> Result<StochasticSchedule> {
    stochastic_schedule_with_cap(mdp, eps, delta, mode, DEFAULT_SAMPLE_CAP)
}

pub fn stochastic_schedule_with_cap(
    mdp: &TabularMdp,
    eps: f64,
    delta: f64,
    mode: ScheduleMode,
    sample_cap: f64,
) -> Result<StochasticSchedule> {
    check_target(eps, delta)?;
    let gamma = mdp.gamma();
    let r_star = mdp.reward_bound();
    let one_minus = 1.0 - gamma;
    let (horizon, eps_seq, steps, step_sizes, batch_sizes) = match mode {
        ScheduleMode::Theoretical => {
            let inv_mu = mdp.inv_min_init_mass()?;
            let horizon = horizon_overall_error(gamma, r_star, eps);
            let mut eps_seq = optimal_epoch_eps(gamma, horizon, eps * one_minus / 6.0)?;
            eps_seq.push(one_minus * eps / 6.0);
            let a2 = (mdp.n_actions() * mdp.n_actions()) as f64;
            let epochs = horizon as f64 + 1.0;
            let mut steps = Vec::new();
            let mut step_sizes = Vec::new();
            let mut batches = Vec::new();
            for (h, &e) in eps_seq.iter().enumerate() {
                let a_h = 1.0 - gamma.powi(h as i32 + 1);
                let root = 12.0 * a2 * epochs * a_h * r_star / (one_minus * e * delta);
                let n = (root * root * inv_mu * inv_mu).ceil();
                steps.push(n);
                step_sizes.push(one_minus / (2.0 * a_h * r_star * n.sqrt()));
                batches.push((5.0 * a2 * epochs * epochs * n.powi(3) / (delta * delta)).ceil());
            }
            (horizon, eps_seq, steps, step_sizes, batches)
        }
        ScheduleMode::Practical | ScheduleMode::Custom { .. } => {
            let (c_eta, c_n) = match mode {
                ScheduleMode::Custom {
                    step_constant,
                    steps_constant,
                } => (step_constant, steps_constant),
                _ => (2.0, 45.0),
            };
            if !(c_eta > 0.0 && c_n > 0.0) {
                return Err(Error::Schedule("schedule constants must be positive".into()));
            }
            let horizon = horizon_value_error(gamma, r_star, eps);
            let eps_seq = optimal_epoch_eps(gamma, horizon, eps / 2.0)?;
            let a: Vec<f64> = (0..horizon).map(|h| 1.0 - gamma.powi(h as i32 + 1)).collect();
            let steps = a.iter().map(|a_h| (c_n * a_h / one_minus).ceil().max(1.0)).collect();
            let step_sizes = a.iter().map(|a_h| c_eta * one_minus / a_h).collect();
            (horizon, eps_seq, steps, step_sizes, vec![1.0; horizon])
        }
    };
    let total_samples = (0..steps.len())
        .map(|h| (h as f64 + 1.0) * steps[h] * batch_sizes[h])
        .sum();
    Ok(StochasticSchedule {
        mode,
        horizon,
        eps: eps_seq,
        steps,
        step_sizes,
        batch_sizes,
        delta,
        delta_h: delta / (horizon as f64 + 1.0),
        total_samples,
        sample_cap,
    })
}

pub(crate) fn as_count(x: f64, what: &str) -> Result<u64> {
    if !(1.0..=9.0e15).contains(&x) {
        return Err(Error::InfeasibleSchedule(format!("{what} {x:.3e} is not a usable count")));
    }
    Ok(x as u64)
}

/// Sample-based DynPG following `schedule`.
pub fn dynpg_stochastic(
    mdp: &TabularMdp,
    schedule: &StochasticSchedule,
    seed: RngSeed,
) -> Result<DynPgOutcome> {
    Ok(dynpg_stochastic_run(mdp, schedule, seed, &RunControl::default())?.outcome)
}

/// [`dynpg_stochastic`] with a budget, snapshots and an override for
/// infeasible schedules.
///
/// Gradient step `n` of epoch `h` draws rollout `i` from substream `(h, n, i)`.
/// Snapshots hold the head of the stack built so far (uniform while empty).
pub fn dynpg_stochastic_run(
    mdp: &TabularMdp,
    schedule: &StochasticSchedule,
    seed: RngSeed,
    control: &RunControl,
) -> Result<TrackedRun> {
    if !schedule.is_feasible() && !control.force {
        return Err(Error::InfeasibleSchedule(schedule.warning().unwrap_or_default()));
    }
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let mut tracker = Tracker::new(&control.checkpoints)?;
    let mut stack = PolicyStack::new();
    let mut value = ValueFunction::zeros(n_states);
    let mut head_policy = StochasticPolicy::uniform(n_states, n_actions);
    let mut reports = Vec::new();
    let mut used = 0u64;
    let mut exhausted = false;

    'epochs: for h in 0..schedule.epochs() {
        let n_steps = as_count(schedule.steps[h], "step count")?;
        let k = as_count(schedule.batch_sizes[h], "batch size")?;
        let eta = schedule.step_sizes[h];
        let cost = (h as u64 + 1)
            .checked_mul(k)
            .ok_or_else(|| Error::InfeasibleSchedule("interaction count overflows".into()))?;
        let mut theta = Array2::<f64>::zeros((n_states, n_actions));
        let mut probs = Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64);
        let mut grad = Array2::<f64>::zeros((n_states, n_actions));
        let mut row = vec![0.0; n_actions];
        let mut done = 0u64;
        for n in 0..n_steps {
            if control.budget.is_some_and(|b| used + cost > b) {
                exhausted = true;
                break 'epochs;
            }
            tracker.before_spend(used, cost, || head_policy.clone());
            let rollouts = batch_rollouts(mdp, &probs, &stack, k, seed, n);
            grad.fill(0.0);
            accumulate_scores(&mut grad, &probs, &rollouts, 1.0 / k as f64);
            let mut touched: Vec<usize> = rollouts.iter().map(|r| r.0).collect();
            touched.sort_unstable();
            touched.dedup();
            for &s in &touched {
                for (t, g) in theta.row_mut(s).iter_mut().zip(grad.row(s)) {
                    *t += eta * g;
                }
                let logits = theta.row(s).to_vec();
                if logits.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Numeric("stochastic ascent produced non-finite logits".into()));
                }
                softmax_row_into(&logits, &mut row);
                probs.row_mut(s).assign(&ArrayView1::from(&row[..]));
            }
            used += cost;
            done += 1;
        }
        let pi = StochasticPolicy::new(probs)?;
        let q = q_from_value(mdp, &value)?;
        let objective = BanditObjective::from_q(q.into_inner(), mdp.init_dist().clone());
        let epoch_samples = cost * done;
        reports.push(EpochReport {
            epoch: h,
            step_size: eta,
            grad_steps: done,
            batch_size: k,
            one_step_error: objective.one_step_error(&pi),
            epoch_interactions: epoch_samples,
            cumulative_interactions: used,
            min_optimal_prob: None,
        });
        value = ValueFunction::new(objective.state_values(&pi))?;
        head_policy = pi.clone();
        stack.push_front(pi);
    }
    let snapshots = tracker.finish(&head_policy);
    let policy = head_policy;
    Ok(TrackedRun {
        outcome: DynPgOutcome {
            stack,
            policy,
            reports,
            converged: !exhausted,
        },
        snapshots,
        interactions: used,
        budget_exhausted: exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1, Array3};

    fn bandit() -> TabularMdp {
        TabularMdp::new(
            Array3::from_elem((1, 2, 1), 1.0),
            array![[1.0, 0.0]],
            0.5,
            array![1.0],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn empty_stack_gives_single_step() {
        let t = sample_trajectory(&bandit(), &Logits::zeros(1, 2), &PolicyStack::new(), RngSeed::new(3))
            .unwrap();
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn deterministic_everything_is_seed_free() {
        let mdp = TabularMdp::new(
            Array3::from_shape_fn((2, 2, 2), |(s, _, n)| if n == 1 - s { 1.0 } else { 0.0 }),
            array![[1.0, 0.0], [0.5, 0.25]],
            0.9,
            array![1.0, 0.0],
            1.0,
        )
        .unwrap();
        let det = StochasticPolicy::deterministic(&[1, 0], 2).unwrap();
        let stack = PolicyStack::from_policies(vec![det.clone(), det]);
        let theta = Logits::new(array![[-800.0, 0.0], [0.0, -800.0]]).unwrap();
        let a = sample_trajectory(&mdp, &theta, &stack, RngSeed::new(1)).unwrap();
        let b = sample_trajectory(&mdp, &theta, &stack, RngSeed::new(99)).unwrap();
        assert_eq!(a, b);
        let states: Vec<usize> = a.steps.iter().map(|s| s.state).collect();
        assert_eq!(states, vec![0, 1, 0]);
        assert!((a.discounted_return(0.9) - (0.0 + 0.9 * 0.5 + 0.81 * 0.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_rewards_give_zero_estimate() {
        let mdp = TabularMdp::new(
            Array3::from_elem((2, 3, 2), 0.5),
            Array2::zeros((2, 3)),
            0.7,
            array![0.5, 0.5],
            1.0,
        )
        .unwrap();
        let stack = PolicyStack::from_policies(vec![StochasticPolicy::uniform(2, 3)]);
        let g = estimate_gradient(&mdp, &Logits::zeros(2, 3), &stack, 50, RngSeed::new(0)).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_action_estimate_is_zero() {
        let mdp = TabularMdp::new(
            Array3::from_elem((1, 1, 1), 1.0),
            array![[0.7]],
            0.7,
            array![1.0],
            1.0,
        )
        .unwrap();
        let g = estimate_gradient(&mdp, &Logits::zeros(1, 1), &PolicyStack::new(), 10, RngSeed::new(0))
            .unwrap();
        assert_eq!(g, Array2::<f64>::zeros((1, 1)));
    }

    #[test]
    fn practical_schedule_values() {
        let mdp = TabularMdp::new(
            Array3::from_elem((1, 2, 1), 1.0),
            array![[1.0, 0.0]],
            0.99,
            array![1.0],
            1.0,
        )
        .unwrap();
        let s = stochastic_schedule(&mdp, 0.01, 0.1, ScheduleMode::Practical).unwrap();
        // 4500 * (1 - 0.99^6) = 263.339...
        assert_eq!(s.steps[5], 264.0);
        assert!((s.step_sizes[0] - 2.0).abs() < 1e-12);
        assert!(s.batch_sizes.iter().all(|&k| k == 1.0));
        assert_eq!(s.horizon, horizon_value_error(0.99, 1.0, 0.01));
        assert!((s.delta_h - 0.1 / (s.horizon as f64 + 1.0)).abs() < 1e-18);
    }

    #[test]
    fn theoretical_schedule_is_flagged() {
        let mdp = bandit();
        let s = stochastic_schedule(&mdp, 0.1, 0.1, ScheduleMode::Theoretical).unwrap();
        assert_eq!(s.epochs(), s.horizon + 1);
        assert!(!s.is_feasible());
        assert!(s.warning().is_some());
        assert!(matches!(
            dynpg_stochastic(&mdp, &s, RngSeed::new(0)),
            Err(Error::InfeasibleSchedule(_))
        ));
    }

    #[test]
    fn schedule_input_errors() {
        let mdp = bandit();
        assert!(stochastic_schedule(&mdp, 0.0, 0.1, ScheduleMode::Practical).is_err());
        assert!(stochastic_schedule(&mdp, 0.1, 1.0, ScheduleMode::Practical).is_err());
        let zero_mu = TabularMdp::new(
            Array3::from_elem((2, 1, 2), 0.5),
            Array2::zeros((2, 1)),
            0.5,
            Array1::from(vec![1.0, 0.0]),
            1.0,
        )
        .unwrap();
        assert!(matches!(
            stochastic_schedule(&zero_mu, 0.1, 0.1, ScheduleMode::Theoretical),
            Err(Error::Schedule(_))
        ));
        assert!(stochastic_schedule(&zero_mu, 0.1, 0.1, ScheduleMode::Practical).is_ok());
    }

    #[test]
    fn interaction_accounting() {
        let mdp = bandit();
        let s = stochastic_schedule(&mdp, 0.2, 0.1, ScheduleMode::Practical).unwrap();
        let out = dynpg_stochastic(&mdp, &s, RngSeed::new(5)).unwrap();
        for (h, r) in out.reports.iter().enumerate() {
            assert_eq!(r.epoch_interactions as f64, s.epoch_samples(h));
        }
        let total: u64 = out.reports.iter().map(|r| r.epoch_interactions).sum();
        assert_eq!(total as f64, s.total_samples);
        assert_eq!(out.reports.last().unwrap().cumulative_interactions, total);
    }

    #[test]
    fn budget_stops_early() {
        let mdp = bandit();
        let s = stochastic_schedule(&mdp, 0.2, 0.1, ScheduleMode::Practical).unwrap();
        let control = RunControl {
            budget: Some(20),
            checkpoints: vec![1, 19, 20, 1000],
            force: false,
        };
        let run = dynpg_stochastic_run(&mdp, &s, RngSeed::new(5), &control).unwrap();
        assert!(run.budget_exhausted);
        assert!(run.interactions <= 20);
        assert_eq!(run.snapshots.len(), 4);
        assert_eq!(run.snapshots[0].policy, StochasticPolicy::uniform(1, 2));
    }
}
