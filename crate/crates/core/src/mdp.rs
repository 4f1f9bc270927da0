//! Exact tabular MDP machinery.
//!
//! Everything here works with the expected reward `r(s, a)`; reward noise is
//! only consulted by the samplers. All operators are pure functions of their
//! inputs.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for row sums of probability vectors.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Zero-mean Gaussian perturbation added to the expected reward when sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianNoise {
    pub std: f64,
}

/// A finite discounted MDP with dense storage.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    transitions: Array3<f64>,
    rewards: Array2<f64>,
    noise: Array2<Option<GaussianNoise>>,
    gamma: f64,
    init_dist: Array1<f64>,
    reward_bound: f64,
    absorbing: Vec<bool>,
}

fn check_distribution(field: &str, probs: impl Iterator<Item = f64>) -> Result<()> {
    let mut sum = 0.0;
    for (i, p) in probs.enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::invalid_mdp(
                format!("{field}[{i}]"),
                format!("probability must be finite and non-negative, got {p}"),
            ));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::invalid_mdp(
            field,
            format!("probabilities sum to {sum}, expected 1"),
        ));
    }
    Ok(())
}

impl TabularMdp {
    /// Builds an MDP without reward noise, validating every invariant.
    ///
    /// `transitions` is indexed `(s, a, s')`, `rewards` `(s, a)`.
    pub fn new(
        transitions: Array3<f64>,
        rewards: Array2<f64>,
        gamma: f64,
        init_dist: Array1<f64>,
        reward_bound: f64,
    ) -> Result<Self> {
        let (n_states, n_actions, n_next) = transitions.dim();
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid_mdp(
                "n_states",
                "state and action counts must be positive",
            ));
        }
        if n_next != n_states {
            return Err(Error::invalid_mdp(
                "transitions",
                format!("expected {n_states} successor entries, got {n_next}"),
            ));
        }
        if rewards.dim() != (n_states, n_actions) {
            return Err(Error::invalid_mdp(
                "rewards",
                format!(
                    "expected shape ({n_states}, {n_actions}), got {:?}",
                    rewards.dim()
                ),
            ));
        }
        if init_dist.len() != n_states {
            return Err(Error::invalid_mdp(
                "mu",
                format!("expected {n_states} entries, got {}", init_dist.len()),
            ));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid_mdp(
                "gamma",
                format!("discount must lie in (0, 1), got {gamma}"),
            ));
        }
        if !(reward_bound.is_finite() && reward_bound > 0.0) {
            return Err(Error::invalid_mdp(
                "r_star",
                format!("reward bound must be positive and finite, got {reward_bound}"),
            ));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = transitions.slice(ndarray::s![s, a, ..]);
                check_distribution(&format!("transitions[{s}][{a}]"), row.iter().copied())?;
                let r = rewards[[s, a]];
                if !r.is_finite() || r.abs() > reward_bound {
                    return Err(Error::invalid_mdp(
                        format!("rewards[{s}][{a}]"),
                        format!("reward {r} exceeds the bound r_star = {reward_bound}"),
                    ));
                }
            }
        }
        check_distribution("mu", init_dist.iter().copied())?;

        let mut mdp = TabularMdp {
            noise: Array2::from_elem((n_states, n_actions), None),
            transitions,
            rewards,
            gamma,
            init_dist,
            reward_bound,
            absorbing: Vec::new(),
        };
        mdp.absorbing = (0..n_states).map(|s| mdp.compute_absorbing(s)).collect();
        Ok(mdp)
    }

    /// Attaches per-(s, a) reward noise.
    pub fn with_noise(mut self, noise: Array2<Option<GaussianNoise>>) -> Result<Self> {
        if noise.dim() != self.rewards.dim() {
            return Err(Error::invalid_mdp(
                "noise",
                format!(
                    "expected shape {:?}, got {:?}",
                    self.rewards.dim(),
                    noise.dim()
                ),
            ));
        }
        for ((s, a), n) in noise.indexed_iter() {
            if let Some(g) = n {
                if !(g.std.is_finite() && g.std >= 0.0) {
                    return Err(Error::invalid_mdp(
                        format!("noise[{s}][{a}].std"),
                        format!("standard deviation must be finite and non-negative, got {}", g.std),
                    ));
                }
            }
        }
        self.noise = noise;
        self.absorbing = (0..self.n_states()).map(|s| self.compute_absorbing(s)).collect();
        Ok(self)
    }

    /// Same MDP with a different discount factor.
    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid_mdp(
                "gamma",
                format!("discount must lie in (0, 1), got {gamma}"),
            ));
        }
        self.gamma = gamma;
        Ok(self)
    }

    fn compute_absorbing(&self, s: usize) -> bool {
        (0..self.n_actions()).all(|a| {
            self.transitions[[s, a, s]] == 1.0
                && self.rewards[[s, a]] == 0.0
                && self.noise[[s, a]].is_none_or(|g| g.std == 0.0)
        })
    }

    pub fn n_states(&self) -> usize {
        self.rewards.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.rewards.ncols()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    pub fn init_dist(&self) -> &Array1<f64> {
        &self.init_dist
    }

    pub fn rewards(&self) -> &Array2<f64> {
        &self.rewards
    }

    pub fn transitions(&self) -> &Array3<f64> {
        &self.transitions
    }

    pub fn noise(&self) -> &Array2<Option<GaussianNoise>> {
        &self.noise
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[[s, a, next]]
    }

    /// True when `s` loops to itself under every action with zero reward.
    pub fn is_absorbing(&self, s: usize) -> bool {
        self.absorbing[s]
    }

    /// `‖1/μ‖_∞`, or an error when some state has zero initial mass.
    pub fn inv_min_init_mass(&self) -> Result<f64> {
        let min = self.init_dist.iter().copied().fold(f64::INFINITY, f64::min);
        if min <= 0.0 {
            return Err(Error::Schedule(
                "the initial distribution must put positive mass on every state".into(),
            ));
        }
        Ok(1.0 / min)
    }

    pub(crate) fn check_value(&self, v: &ValueFunction) -> Result<()> {
        if v.len() != self.n_states() {
            return Err(Error::Shape(format!(
                "value function has {} entries, MDP has {} states",
                v.len(),
                self.n_states()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_policy(&self, pi: &StochasticPolicy) -> Result<()> {
        if pi.probs().dim() != (self.n_states(), self.n_actions()) {
            return Err(Error::Shape(format!(
                "policy has shape {:?}, MDP has ({}, {})",
                pi.probs().dim(),
                self.n_states(),
                self.n_actions()
            )));
        }
        Ok(())
    }

    /// `P_π` as a dense matrix.
    pub(crate) fn policy_transition_matrix(&self, pi: &StochasticPolicy) -> DMatrix<f64> {
        let n = self.n_states();
        let mut p = DMatrix::zeros(n, n);
        for s in 0..n {
            for a in 0..self.n_actions() {
                let w = pi.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for next in 0..n {
                    p[(s, next)] += w * self.transitions[[s, a, next]];
                }
            }
        }
        p
    }

    /// `r_π(s) = Σ_a π(a|s) r(s, a)`.
    pub(crate) fn policy_reward(&self, pi: &StochasticPolicy) -> Array1<f64> {
        Array1::from_shape_fn(self.n_states(), |s| {
            (0..self.n_actions())
                .map(|a| pi.prob(s, a) * self.rewards[[s, a]])
                .sum()
        })
    }
}

/// A state-value vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction(Array1<f64>);

impl ValueFunction {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("value function has non-finite entries".into()));
        }
        Ok(ValueFunction(values))
    }

    pub fn zeros(n_states: usize) -> Self {
        ValueFunction(Array1::zeros(n_states))
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn at(&self, s: usize) -> f64 {
        self.0[s]
    }

    /// `‖self − other‖_∞`.
    pub fn sup_dist(&self, other: &ValueFunction) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// `V(μ) = Σ_s μ(s) V(s)`.
    pub fn expectation(&self, dist: &Array1<f64>) -> f64 {
        self.0.dot(dist)
    }
}

/// A state-action value matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction(Array2<f64>);

impl QFunction {
    pub fn new(values: Array2<f64>) -> Self {
        QFunction(values)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn at(&self, s: usize, a: usize) -> f64 {
        self.0[[s, a]]
    }
}

/// A row-stochastic policy matrix `π(a|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticPolicy(Array2<f64>);

impl StochasticPolicy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (s, row) in probs.outer_iter().enumerate() {
            let mut sum = 0.0;
            for (a, &p) in row.iter().enumerate() {
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::Input(format!(
                        "policy entry ({s}, {a}) = {p} is not a probability"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Input(format!(
                    "policy row {s} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(StochasticPolicy(probs))
    }

    pub(crate) fn from_probs_unchecked(probs: Array2<f64>) -> Self {
        StochasticPolicy(probs)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        StochasticPolicy(Array2::from_elem(
            (n_states, n_actions),
            1.0 / n_actions as f64,
        ))
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut probs = Array2::zeros((actions.len(), n_actions));
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::Index(format!(
                    "action {a} in state {s}, only {n_actions} actions"
                )));
            }
            probs[[s, a]] = 1.0;
        }
        Ok(StochasticPolicy(probs))
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.0[[s, a]]
    }

    pub fn n_states(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.0.ncols()
    }
}

/// Non-stationary policy `{π_{h−1}, …, π_0}`.
///
/// Element 0 acts at the first step and is the most recently trained policy;
/// the last element acts at the final step of the horizon.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicyStack {
    policies: Vec<StochasticPolicy>,
}

impl PolicyStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_policies(policies: Vec<StochasticPolicy>) -> Self {
        PolicyStack { policies }
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    /// Policy applied at the first step, if any.
    pub fn head(&self) -> Option<&StochasticPolicy> {
        self.policies.first()
    }

    pub fn policies(&self) -> &[StochasticPolicy] {
        &self.policies
    }

    /// Attaches a newly trained policy at the front.
    pub fn push_front(&mut self, pi: StochasticPolicy) {
        self.policies.insert(0, pi);
    }

    /// The `h` policies acting last, i.e. the stack as it was after epoch `h − 1`.
    pub fn suffix(&self, h: usize) -> PolicyStack {
        let h = h.min(self.len());
        PolicyStack {
            policies: self.policies[self.len() - h..].to_vec(),
        }
    }
}

/// `Σ_{s'} p(s'|s,a) V(s')` for every `(s, a)`.
fn expected_next(mdp: &TabularMdp, v: &Array1<f64>) -> Array2<f64> {
    let n = mdp.n_states();
    Array2::from_shape_fn((n, mdp.n_actions()), |(s, a)| {
        let mut acc = 0.0;
        for next in 0..n {
            acc += mdp.transitions[[s, a, next]] * v[next];
        }
        acc
    })
}

/// `Q^V(s, a) = r(s, a) + γ Σ_{s'} p(s'|s, a) V(s')`.
pub fn q_from_value(mdp: &TabularMdp, v: &ValueFunction) -> Result<QFunction> {
    mdp.check_value(v)?;
    let mut q = expected_next(mdp, v.values());
    q.mapv_inplace(|x| mdp.gamma * x);
    q += &mdp.rewards;
    Ok(QFunction(q))
}

fn policy_average(q: &Array2<f64>, pi: &StochasticPolicy) -> Array1<f64> {
    Array1::from_shape_fn(q.nrows(), |s| {
        q.row(s)
            .iter()
            .zip(pi.0.row(s).iter())
            .map(|(x, p)| x * p)
            .sum()
    })
}

/// Bellman expectation operator `T^π`.
pub fn bellman_expect(
    mdp: &TabularMdp,
    v: &ValueFunction,
    pi: &StochasticPolicy,
) -> Result<ValueFunction> {
    mdp.check_policy(pi)?;
    let q = q_from_value(mdp, v)?;
    Ok(ValueFunction(policy_average(&q.0, pi)))
}

/// Bellman optimality operator `T^*`.
pub fn bellman_optimal(mdp: &TabularMdp, v: &ValueFunction) -> Result<ValueFunction> {
    let q = q_from_value(mdp, v)?;
    Ok(ValueFunction(
        q.0.rows()
            .into_iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect(),
    ))
}

/// Index of the largest entry; ties resolve to the lowest index.
pub(crate) fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, x) in row.into_iter().enumerate() {
        if x > best_val {
            best_val = x;
            best = i;
        }
    }
    best
}

/// Deterministic policy that is greedy with respect to `Q^V`.
pub fn greedy_policy(mdp: &TabularMdp, v: &ValueFunction) -> Result<StochasticPolicy> {
    let q = q_from_value(mdp, v)?;
    let actions: Vec<usize> = q.0.rows().into_iter().map(|r| argmax(r.iter().copied())).collect();
    StochasticPolicy::deterministic(&actions, mdp.n_actions())
}

/// Values `[V_0, V_1, …, V_H]` of every suffix of the stack, `V_0 ≡ 0`.
pub fn stack_values(mdp: &TabularMdp, stack: &PolicyStack) -> Result<Vec<ValueFunction>> {
    let mut out = Vec::with_capacity(stack.len() + 1);
    let mut v = ValueFunction::zeros(mdp.n_states());
    out.push(v.clone());
    for pi in stack.policies.iter().rev() {
        v = bellman_expect(mdp, &v, pi)?;
        out.push(v.clone());
    }
    Ok(out)
}

/// `V_h` of a non-stationary policy by backward recursion from `V_0 ≡ 0`.
pub fn evaluate_stack(mdp: &TabularMdp, stack: &PolicyStack) -> Result<ValueFunction> {
    let mut v = ValueFunction::zeros(mdp.n_states());
    for pi in stack.policies.iter().rev() {
        v = bellman_expect(mdp, &v, pi)?;
    }
    Ok(v)
}

/// Fixed point of `T^π` via the dense linear system `(I − γP_π)V = r_π`.
pub fn evaluate_stationary_inf(mdp: &TabularMdp, pi: &StochasticPolicy) -> Result<ValueFunction> {
    mdp.check_policy(pi)?;
    let n = mdp.n_states();
    let p = mdp.policy_transition_matrix(pi);
    let system = DMatrix::identity(n, n) - p * mdp.gamma;
    let rhs = DVector::from_iterator(n, mdp.policy_reward(pi));
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("policy evaluation system is singular".into()))?;
    if solution.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("policy evaluation produced non-finite values".into()));
    }
    Ok(ValueFunction(solution.iter().copied().collect()))
}

/// When value iteration stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    /// Exactly this many applications of `T^*` from `V_0 ≡ 0`.
    Horizon(usize),
    /// Until the result is within this sup-norm distance of `V_∞^*`.
    Tolerance(f64),
}

/// Value iteration from `V_0 ≡ 0`; returns the final iterate and its greedy policy.
pub fn value_iteration(
    mdp: &TabularMdp,
    termination: Termination,
) -> Result<(ValueFunction, StochasticPolicy)> {
    let mut v = ValueFunction::zeros(mdp.n_states());
    match termination {
        Termination::Horizon(h) => {
            for _ in 0..h {
                v = bellman_optimal(mdp, &v)?;
            }
        }
        Termination::Tolerance(tol) => {
            if !(tol > 0.0) {
                return Err(Error::Input(format!("tolerance must be positive, got {tol}")));
            }
            // ‖V_{k+1} − V*‖ ≤ γ/(1−γ)·‖V_{k+1} − V_k‖
            let threshold = tol * (1.0 - mdp.gamma) / mdp.gamma;
            loop {
                let next = bellman_optimal(mdp, &v)?;
                let delta = next.sup_dist(&v);
                v = next;
                if delta <= threshold {
                    break;
                }
            }
        }
    }
    let pi = greedy_policy(mdp, &v)?;
    Ok((v, pi))
}

/// `A_{h+1}(s, a) = Q_{h+1}(s, a) − V_{h+1}^{{head, stack}}(s)`.
pub fn advantage(
    mdp: &TabularMdp,
    stack: &PolicyStack,
    head: &StochasticPolicy,
) -> Result<QFunction> {
    mdp.check_policy(head)?;
    let q = q_from_value(mdp, &evaluate_stack(mdp, stack)?)?;
    Ok(QFunction(advantage_from_q(&q.0, head)))
}

pub(crate) fn advantage_from_q(q: &Array2<f64>, pi: &StochasticPolicy) -> Array2<f64> {
    let v = policy_average(q, pi);
    let mut adv = q.clone();
    for (s, mut row) in adv.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|x| x - v[s]);
    }
    adv
}
