//! DynPG with exact gradients and the schedule calculators for it.
//!
//! Each epoch `h` trains a fresh softmax head, starting from uniform logits,
//! on the contextual bandit whose continuation is the current stack. The
//! trained head is then attached in front of the stack.

use serde::{Deserialize, Serialize};

use crate::diagnostics::lagrange_schedule;
use crate::error::{Error, Result};
use crate::mdp::{q_from_value, PolicyStack, StochasticPolicy, TabularMdp, ValueFunction};
use crate::kernel::{train_rows, RowOptions};
use crate::softmax::{softmax, BanditObjective, Logits};
use crate::track::{RunControl, Snapshot, Tracker};

/// Which error a schedule is designed to control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorTarget {
    /// `‖V_∞^* − V_H^{stack}‖_∞`, epochs `0..H`.
    ValueError,
    /// `‖V_∞^* − V_∞^{head}‖_∞`, epochs `0..=H`.
    OverallError,
}

/// Per-epoch accuracies, step sizes and gradient-step counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub horizon: usize,
    pub eps: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub grad_steps: Vec<u64>,
    pub target: ErrorTarget,
}

impl Schedule {
    pub fn new(
        horizon: usize,
        eps: Vec<f64>,
        step_sizes: Vec<f64>,
        grad_steps: Vec<u64>,
        target: ErrorTarget,
    ) -> Result<Self> {
        let expected = match target {
            ErrorTarget::ValueError => horizon,
            ErrorTarget::OverallError => horizon + 1,
        };
        if eps.len() != expected || step_sizes.len() != expected || grad_steps.len() != expected {
            return Err(Error::Schedule(format!(
                "expected {expected} epochs, got eps {}, step sizes {}, steps {}",
                eps.len(),
                step_sizes.len(),
                grad_steps.len()
            )));
        }
        if eps.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Schedule("every epoch accuracy must be positive".into()));
        }
        if step_sizes.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::Schedule("every step size must be positive".into()));
        }
        if grad_steps.contains(&0) {
            return Err(Error::Schedule("every epoch needs at least one step".into()));
        }
        Ok(Schedule {
            horizon,
            eps,
            step_sizes,
            grad_steps,
            target,
        })
    }

    /// Number of epochs the schedule runs.
    pub fn epochs(&self) -> usize {
        self.eps.len()
    }

    pub fn total_grad_steps(&self) -> u64 {
        self.grad_steps.iter().sum()
    }
}

/// `⌈log_γ(x)⌉`, clamped at zero.
pub(crate) fn ceil_log_gamma(gamma: f64, x: f64) -> usize {
    let h = (x.ln() / gamma.ln()).ceil();
    if h <= 0.0 {
        0
    } else {
        h as usize
    }
}

/// `H = ⌈log_γ((1−γ)ε / (2R*))⌉`.
pub fn horizon_value_error(gamma: f64, reward_bound: f64, eps: f64) -> usize {
    ceil_log_gamma(gamma, (1.0 - gamma) * eps / (2.0 * reward_bound))
}

/// `H = ⌈log_γ((1−γ)²ε / (6R*))⌉`.
pub fn horizon_overall_error(gamma: f64, reward_bound: f64, eps: f64) -> usize {
    ceil_log_gamma(gamma, (1.0 - gamma).powi(2) * eps / (6.0 * reward_bound))
}

/// Smoothness constant `L_h = 2R*(1−γ^{h+1})/(1−γ)` of the epoch-`h` objective.
pub fn smoothness_constant(gamma: f64, reward_bound: f64, h: usize) -> f64 {
    2.0 * reward_bound * (1.0 - gamma.powi(h as i32 + 1)) / (1.0 - gamma)
}

/// `η_h = 1/L_h`.
pub fn step_size(gamma: f64, reward_bound: f64, h: usize) -> f64 {
    1.0 / smoothness_constant(gamma, reward_bound, h)
}

/// `N_h = ⌈4R*(1−γ^{h+1})|A|² ‖1/μ‖_∞ / ((1−γ)ε_h)⌉` exact-gradient steps for
/// epoch accuracy `eps_h`.
pub fn grad_steps_for(mdp: &TabularMdp, h: usize, eps_h: f64) -> Result<u64> {
    if !(eps_h > 0.0) {
        return Err(Error::Schedule(format!("epoch accuracy must be positive, got {eps_h}")));
    }
    let gamma = mdp.gamma();
    let n_actions = mdp.n_actions() as f64;
    let raw = 4.0 * mdp.reward_bound() * (1.0 - gamma.powi(h as i32 + 1)) * n_actions * n_actions
        / ((1.0 - gamma) * eps_h)
        * mdp.inv_min_init_mass()?;
    to_count(raw.ceil())
}

pub(crate) fn to_count(x: f64) -> Result<u64> {
    if !(x.is_finite() && x < u64::MAX as f64) {
        return Err(Error::Schedule(format!("step count {x} does not fit a u64")));
    }
    Ok((x as u64).max(1))
}

/// Optimal epoch accuracies `ε_0..ε_{H−1}` under `Σ γ^{H−h−1} ε_h = budget`.
pub(crate) fn optimal_epoch_eps(gamma: f64, horizon: usize, budget: f64) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Ok(Vec::new());
    }
    let a: Vec<f64> = (0..horizon).map(|h| 1.0 - gamma.powi(h as i32 + 1)).collect();
    let b: Vec<f64> = (0..horizon)
        .map(|h| gamma.powi((horizon - h - 1) as i32))
        .collect();
    Ok(lagrange_schedule(&a, &b, budget)?.0)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Schedule(format!("target accuracy must be positive, got {eps}")));
    }
    Ok(())
}

/// Schedule that makes the stack's `H`-step value `ε`-optimal.
pub fn schedule_value_error(mdp: &TabularMdp, eps: f64) -> Result<Schedule> {
    check_eps(eps)?;
    mdp.inv_min_init_mass()?;
    let gamma = mdp.gamma();
    let r_star = mdp.reward_bound();
    let horizon = horizon_value_error(gamma, r_star, eps);
    let eps_seq = optimal_epoch_eps(gamma, horizon, eps / 2.0)?;
    let step_sizes = (0..horizon).map(|h| step_size(gamma, r_star, h)).collect();
    let grad_steps = eps_seq
        .iter()
        .enumerate()
        .map(|(h, &e)| grad_steps_for(mdp, h, e))
        .collect::<Result<_>>()?;
    Schedule::new(horizon, eps_seq, step_sizes, grad_steps, ErrorTarget::ValueError)
}

/// Schedule that makes the returned stationary head `ε`-optimal.
pub fn schedule_overall_error(mdp: &TabularMdp, eps: f64) -> Result<Schedule> {
    check_eps(eps)?;
    mdp.inv_min_init_mass()?;
    let gamma = mdp.gamma();
    let r_star = mdp.reward_bound();
    let horizon = horizon_overall_error(gamma, r_star, eps);
    let mut eps_seq = optimal_epoch_eps(gamma, horizon, eps * (1.0 - gamma) / 6.0)?;
    eps_seq.push((1.0 - gamma) * eps / 6.0);
    let step_sizes = (0..=horizon).map(|h| step_size(gamma, r_star, h)).collect();
    let grad_steps = eps_seq
        .iter()
        .enumerate()
        .map(|(h, &e)| grad_steps_for(mdp, h, e))
        .collect::<Result<_>>()?;
    Schedule::new(horizon, eps_seq, step_sizes, grad_steps, ErrorTarget::OverallError)
}

/// Closed-form bound on `Σ N_h` for a schedule built for `target` at accuracy `eps`.
pub fn total_steps_bound(mdp: &TabularMdp, eps: f64, target: ErrorTarget) -> Result<f64> {
    let gamma = mdp.gamma();
    let r_star = mdp.reward_bound();
    let a2 = (mdp.n_actions() * mdp.n_actions()) as f64;
    let inv_mu = mdp.inv_min_init_mass()?;
    Ok(match target {
        ErrorTarget::ValueError => {
            let h = horizon_value_error(gamma, r_star, eps) as f64;
            8.0 * r_star * a2 / ((1.0 - gamma).powi(2) * eps) * h * inv_mu
        }
        ErrorTarget::OverallError => {
            let h = horizon_overall_error(gamma, r_star, eps) as f64;
            48.0 * r_star * a2 / ((1.0 - gamma).powi(3) * eps) * h * inv_mu
        }
    })
}

/// Diagnostics for one trained epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub step_size: f64,
    pub grad_steps: u64,
    pub batch_size: u64,
    /// `‖T^*(V_h) − V_{h+1}‖_∞` measured exactly.
    pub one_step_error: f64,
    pub epoch_interactions: u64,
    pub cumulative_interactions: u64,
    /// Smallest `π_{θ_n}(a*(s)|s)` over states and iterates; exact epochs only.
    pub min_optimal_prob: Option<f64>,
}

/// Inner-loop settings for one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochOptions {
    pub step_size: f64,
    pub max_steps: u64,
    /// Stop as soon as the iterate's one-step error is at most this value.
    pub stop_at: Option<f64>,
}

/// Result of gradient ascent on one epoch objective.
#[derive(Debug, Clone)]
pub struct TrainedHead {
    pub theta: Logits,
    pub policy: StochasticPolicy,
    pub steps: u64,
    pub one_step_error: f64,
    pub min_optimal_prob: f64,
}

/// Exact gradient ascent from `θ_0 = 0` on a bandit objective.
///
/// Without `stop_at` every state performs exactly `max_steps` updates. With
/// it, each state stops at its first iterate whose gap is within the target;
/// the reported step count is the largest over states, i.e. the number of
/// joint iterations after which every state had reached the target.
pub fn train_head(objective: &BanditObjective, opts: &EpochOptions) -> Result<TrainedHead> {
    if !(opts.step_size >= 0.0 && opts.step_size.is_finite()) {
        return Err(Error::Input(format!(
            "step size must be non-negative, got {}",
            opts.step_size
        )));
    }
    let q = objective.q().as_standard_layout().into_owned();
    let (n_states, n_actions) = q.dim();
    let q = q.as_slice().expect("standard layout");
    let weights = objective.weights();
    let optimal = objective.optimal_actions();

    let mut theta = vec![0.0; n_states * n_actions];
    let scales: Vec<f64> = weights.iter().map(|w| opts.step_size * w).collect();
    let runs = train_rows(
        &mut theta,
        q,
        &scales,
        optimal,
        RowOptions {
            max_steps: opts.max_steps,
            stop_at: opts.stop_at,
        },
    );
    let steps = runs.iter().map(|r| r.steps).max().unwrap_or(0);
    let worst = runs.iter().map(|r| r.gap).fold(0.0, f64::max);
    let min_opt = runs.iter().map(|r| r.min_opt).fold(f64::INFINITY, f64::min);
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("gradient ascent produced non-finite logits".into()));
    }
    let theta = Logits::from_raw(
        ndarray::Array2::from_shape_vec((n_states, n_actions), theta).expect("shape"),
    );
    let policy = softmax(&theta)?;
    Ok(TrainedHead {
        theta,
        policy,
        steps,
        one_step_error: worst,
        min_optimal_prob: min_opt,
    })
}

fn epoch_interactions(epoch: usize, steps: u64, batch: u64) -> u64 {
    (epoch as u64 + 1) * steps * batch
}

/// One DynPG epoch in front of `stack`: `n_steps` exact ascent steps of size `eta`.
pub fn run_epoch(
    mdp: &TabularMdp,
    stack: &PolicyStack,
    eta: f64,
    n_steps: u64,
) -> Result<(StochasticPolicy, EpochReport)> {
    if n_steps == 0 {
        return Err(Error::Input("an epoch needs at least one gradient step".into()));
    }
    let objective = BanditObjective::from_stack(mdp, stack)?;
    let trained = train_head(
        &objective,
        &EpochOptions {
            step_size: eta,
            max_steps: n_steps,
            stop_at: None,
        },
    )?;
    let epoch = stack.len();
    let interactions = epoch_interactions(epoch, trained.steps, 1);
    let report = EpochReport {
        epoch,
        step_size: eta,
        grad_steps: trained.steps,
        batch_size: 1,
        one_step_error: trained.one_step_error,
        epoch_interactions: interactions,
        cumulative_interactions: interactions,
        min_optimal_prob: Some(trained.min_optimal_prob),
    };
    Ok((trained.policy, report))
}

/// Output of a DynPG run.
#[derive(Debug, Clone)]
pub struct DynPgOutcome {
    /// `Λ`, newest policy first.
    pub stack: PolicyStack,
    /// The returned stationary policy: the head of `Λ`, or uniform when empty.
    pub policy: StochasticPolicy,
    pub reports: Vec<EpochReport>,
    /// False when an adaptive run hit its epoch limit first.
    pub converged: bool,
}

/// Run options for [`dynpg_with`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DynPgOptions {
    /// End each epoch once its one-step error reaches the schedule's `ε_h`,
    /// never exceeding `N_h` steps.
    pub stop_at_epoch_target: bool,
}

/// Incremental DynPG state: the stack and its current value `V_h`.
struct StackBuilder<'a> {
    mdp: &'a TabularMdp,
    stack: PolicyStack,
    value: ValueFunction,
    reports: Vec<EpochReport>,
    cumulative: u64,
}

impl<'a> StackBuilder<'a> {
    fn new(mdp: &'a TabularMdp) -> Self {
        StackBuilder {
            mdp,
            stack: PolicyStack::new(),
            value: ValueFunction::zeros(mdp.n_states()),
            reports: Vec::new(),
            cumulative: 0,
        }
    }

    fn objective(&self) -> Result<BanditObjective> {
        let q = q_from_value(self.mdp, &self.value)?;
        Ok(BanditObjective::from_q(q.into_inner(), self.mdp.init_dist().clone()))
    }

    /// Trains the next head; returns `‖V_{h+1} − V_h‖_∞`.
    fn epoch(&mut self, opts: &EpochOptions) -> Result<f64> {
        let objective = self.objective()?;
        let trained = train_head(&objective, opts)?;
        let epoch = self.stack.len();
        let next = ValueFunction::new(objective.state_values(&trained.policy))?;
        let change = next.sup_dist(&self.value);
        let interactions = epoch_interactions(epoch, trained.steps, 1);
        self.cumulative += interactions;
        self.reports.push(EpochReport {
            epoch,
            step_size: opts.step_size,
            grad_steps: trained.steps,
            batch_size: 1,
            one_step_error: trained.one_step_error,
            epoch_interactions: interactions,
            cumulative_interactions: self.cumulative,
            min_optimal_prob: Some(trained.min_optimal_prob),
        });
        self.stack.push_front(trained.policy);
        self.value = next;
        Ok(change)
    }

    fn head(&self) -> StochasticPolicy {
        self.stack
            .head()
            .cloned()
            .unwrap_or_else(|| StochasticPolicy::uniform(self.mdp.n_states(), self.mdp.n_actions()))
    }

    fn finish(self, converged: bool) -> DynPgOutcome {
        let policy = self.head();
        DynPgOutcome {
            stack: self.stack,
            policy,
            reports: self.reports,
            converged,
        }
    }
}

/// DynPG with exact gradients following `schedule`.
pub fn dynpg(mdp: &TabularMdp, schedule: &Schedule) -> Result<DynPgOutcome> {
    dynpg_with(mdp, schedule, DynPgOptions::default())
}

pub fn dynpg_with(
    mdp: &TabularMdp,
    schedule: &Schedule,
    options: DynPgOptions,
) -> Result<DynPgOutcome> {
    let mut builder = StackBuilder::new(mdp);
    for h in 0..schedule.epochs() {
        builder.epoch(&EpochOptions {
            step_size: schedule.step_sizes[h],
            max_steps: schedule.grad_steps[h],
            stop_at: options.stop_at_epoch_target.then_some(schedule.eps[h]),
        })?;
    }
    Ok(builder.finish(true))
}

/// A DynPG run together with its checkpoint snapshots.
#[derive(Debug, Clone)]
pub struct TrackedRun {
    pub outcome: DynPgOutcome,
    pub snapshots: Vec<Snapshot>,
    pub interactions: u64,
    /// True when the run stopped because the next step would exceed the budget.
    pub budget_exhausted: bool,
}

/// Exact DynPG charged `(h+1)·N_h` interactions per epoch.
///
/// An epoch that would overrun the budget is not started. Snapshots hold the
/// head of the stack built so far, or the uniform policy while it is empty.
pub fn dynpg_run(mdp: &TabularMdp, schedule: &Schedule, control: &RunControl) -> Result<TrackedRun> {
    let mut tracker = Tracker::new(&control.checkpoints)?;
    let mut builder = StackBuilder::new(mdp);
    let mut exhausted = false;
    for h in 0..schedule.epochs() {
        let cost = epoch_interactions(h, schedule.grad_steps[h], 1);
        if control.budget.is_some_and(|b| builder.cumulative + cost > b) {
            exhausted = true;
            break;
        }
        tracker.before_spend(builder.cumulative, cost, || builder.head());
        builder.epoch(&EpochOptions {
            step_size: schedule.step_sizes[h],
            max_steps: schedule.grad_steps[h],
            stop_at: None,
        })?;
    }
    let snapshots = tracker.finish(&builder.head());
    let interactions = builder.cumulative;
    Ok(TrackedRun {
        outcome: builder.finish(!exhausted),
        snapshots,
        interactions,
        budget_exhausted: exhausted,
    })
}

/// Step size and step count for one adaptive epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRule {
    pub step_size: f64,
    pub grad_steps: u64,
}

/// DynPG that stops once `‖V_{h+1} − V_h‖_∞ ≤ eps_stop`.
///
/// On reaching `max_epochs` first, the stack built so far is returned with
/// `converged = false`.
pub fn dynpg_adaptive(
    mdp: &TabularMdp,
    eps_stop: f64,
    mut rule: impl FnMut(usize) -> EpochRule,
    max_epochs: usize,
) -> Result<DynPgOutcome> {
    if !(eps_stop > 0.0) {
        return Err(Error::Input(format!("stopping threshold must be positive, got {eps_stop}")));
    }
    let mut builder = StackBuilder::new(mdp);
    for h in 0..max_epochs {
        let EpochRule {
            step_size,
            grad_steps,
        } = rule(h);
        if grad_steps == 0 {
            return Err(Error::Input(format!("epoch {h} was given zero gradient steps")));
        }
        let change = builder.epoch(&EpochOptions {
            step_size,
            max_steps: grad_steps,
            stop_at: None,
        })?;
        if change <= eps_stop {
            return Ok(builder.finish(true));
        }
    }
    Ok(builder.finish(false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{bellman_optimal, evaluate_stack};
    use ndarray::{array, Array1, Array2, Array3};

    fn bandit(gamma: f64) -> TabularMdp {
        TabularMdp::new(
            Array3::from_elem((1, 2, 1), 1.0),
            array![[1.0, 0.0]],
            gamma,
            array![1.0],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn value_error_horizon_example() {
        assert_eq!(horizon_value_error(0.5, 1.0, 1.0), 2);
        let sched = schedule_value_error(&bandit(0.5), 1.0).unwrap();
        assert_eq!(sched.horizon, 2);
        assert_eq!(sched.epochs(), 2);
    }

    #[test]
    fn step_size_is_inverse_smoothness() {
        assert_eq!(step_size(0.5, 1.0, 0), 0.5);
        assert_eq!(smoothness_constant(0.5, 1.0, 0), 2.0);
    }

    #[test]
    fn grad_steps_example() {
        // |A| = 2, ‖1/μ‖_∞ = 2, ε_0 = 1
        let mdp = TabularMdp::new(
            Array3::from_elem((2, 2, 2), 0.5),
            Array2::zeros((2, 2)),
            0.5,
            array![0.5, 0.5],
            1.0,
        )
        .unwrap();
        assert_eq!(grad_steps_for(&mdp, 0, 1.0).unwrap(), 32);
    }

    #[test]
    fn overall_error_horizon_example() {
        assert_eq!(horizon_overall_error(0.5, 1.0, 1.0), 5);
        let sched = schedule_overall_error(&bandit(0.5), 1.0).unwrap();
        assert_eq!(sched.epochs(), 6);
        assert!((sched.eps[5] - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn schedules_need_positive_mu() {
        let mdp = TabularMdp::new(
            Array3::from_elem((2, 1, 2), 0.5),
            Array2::zeros((2, 1)),
            0.5,
            array![1.0, 0.0],
            1.0,
        )
        .unwrap();
        assert!(matches!(schedule_value_error(&mdp, 0.1), Err(Error::Schedule(_))));
        assert!(matches!(schedule_overall_error(&mdp, 0.1), Err(Error::Schedule(_))));
    }

    #[test]
    fn bandit_epoch_meets_its_bound() {
        let (_, report) = run_epoch(&bandit(0.5), &PolicyStack::new(), 0.5, 32).unwrap();
        assert!(report.one_step_error <= 0.5);
        assert_eq!(report.grad_steps, 32);
    }

    #[test]
    fn zero_step_size_keeps_uniform() {
        let mdp = bandit(0.5);
        let (pi, report) = run_epoch(&mdp, &PolicyStack::new(), 0.0, 1).unwrap();
        assert_eq!(pi, StochasticPolicy::uniform(1, 2));
        assert_eq!(report.one_step_error, 0.5);
    }

    #[test]
    fn objective_is_monotone_at_inverse_smoothness() {
        let mdp = TabularMdp::new(
            Array3::from_shape_fn((3, 3, 3), |(s, a, n)| if (s + a) % 3 == n { 1.0 } else { 0.0 }),
            array![[0.2, -0.5, 0.9], [1.0, 0.0, -1.0], [0.3, 0.3, 0.31]],
            0.8,
            Array1::from_elem(3, 1.0 / 3.0),
            1.0,
        )
        .unwrap();
        let stack = PolicyStack::from_policies(vec![StochasticPolicy::uniform(3, 3)]);
        let objective = BanditObjective::from_stack(&mdp, &stack).unwrap();
        let eta = step_size(0.8, 1.0, 1);
        let mut last = f64::NEG_INFINITY;
        for n in 1..40 {
            let head = train_head(
                &objective,
                &EpochOptions {
                    step_size: eta,
                    max_steps: n,
                    stop_at: None,
                },
            )
            .unwrap();
            let value = objective.value(&head.policy);
            assert!(value >= last - 1e-15);
            last = value;
        }
    }

    #[test]
    fn adaptive_stops_on_flat_rewards() {
        let mdp = TabularMdp::new(
            Array3::from_elem((2, 3, 2), 0.5),
            Array2::from_elem((2, 3), 0.25),
            0.9,
            array![0.5, 0.5],
            1.0,
        )
        .unwrap();
        let rule = |h| EpochRule {
            step_size: step_size(0.9, 1.0, h),
            grad_steps: 10,
        };
        let out = dynpg_adaptive(&mdp, 0.3, rule, 50).unwrap();
        assert!(out.converged);
        assert_eq!(out.stack.len(), 1);
        let v = evaluate_stack(&mdp, &out.stack).unwrap();
        assert!(v.values().iter().all(|&x| x == 0.25));
        assert_eq!(out.policy, StochasticPolicy::uniform(2, 3));
    }

    #[test]
    fn adaptive_with_no_epochs() {
        let out = dynpg_adaptive(
            &bandit(0.5),
            0.1,
            |_| EpochRule {
                step_size: 0.5,
                grad_steps: 1,
            },
            0,
        )
        .unwrap();
        assert!(out.stack.is_empty());
        assert!(!out.converged);
        assert_eq!(evaluate_stack(&bandit(0.5), &out.stack).unwrap().at(0), 0.0);
    }

    #[test]
    fn adaptive_reports_non_convergence() {
        let out = dynpg_adaptive(
            &bandit(0.9),
            1e-9,
            |h| EpochRule {
                step_size: step_size(0.9, 1.0, h),
                grad_steps: 5,
            },
            3,
        )
        .unwrap();
        assert!(!out.converged);
        assert_eq!(out.stack.len(), 3);
    }

    #[test]
    fn epoch_report_error_is_bellman_gap() {
        let mdp = bandit(0.5);
        let stack = PolicyStack::from_policies(vec![StochasticPolicy::uniform(1, 2)]);
        let (pi, report) = run_epoch(&mdp, &stack, 0.3, 7).unwrap();
        let v_h = evaluate_stack(&mdp, &stack).unwrap();
        let mut grown = stack.clone();
        grown.push_front(pi);
        let gap = bellman_optimal(&mdp, &v_h)
            .unwrap()
            .sup_dist(&evaluate_stack(&mdp, &grown).unwrap());
        assert!((gap - report.one_step_error).abs() < 1e-14);
        assert_eq!(report.epoch, 1);
        assert_eq!(report.epoch_interactions, 14);
    }
}
