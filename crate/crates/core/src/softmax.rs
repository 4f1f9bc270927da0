//! Tabular softmax parametrization and the exact per-epoch gradient.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::mdp::{evaluate_stack, q_from_value, PolicyStack, StochasticPolicy, TabularMdp};

/// Softmax logits `θ(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(Array2<f64>);

impl Logits {
    pub fn new(theta: Array2<f64>) -> Result<Self> {
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("logits must be finite".into()));
        }
        Ok(Logits(theta))
    }

    /// All-zero logits, i.e. the uniform policy.
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Logits(Array2::zeros((n_states, n_actions)))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn n_states(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.0.ncols()
    }

    /// `θ ← θ + step · direction`.
    pub fn ascend(&mut self, step: f64, direction: &Array2<f64>) -> Result<()> {
        if direction.dim() != self.0.dim() {
            return Err(Error::Shape(format!(
                "direction has shape {:?}, logits {:?}",
                direction.dim(),
                self.0.dim()
            )));
        }
        self.0.scaled_add(step, direction);
        if self.0.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("logits became non-finite".into()));
        }
        Ok(())
    }

    pub(crate) fn from_raw(theta: Array2<f64>) -> Self {
        Logits(theta)
    }
}

/// Writes `softmax(row)` into `out`, subtracting the row maximum first.
pub(crate) fn softmax_row_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = if x == max { 1.0 } else { (x - max).exp() };
        total += *o;
    }
    let inv = 1.0 / total;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// `π_θ(a|s) = exp θ(s,a) / Σ_{a'} exp θ(s,a')`.
pub fn softmax(theta: &Logits) -> Result<StochasticPolicy> {
    if theta.0.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("logits must be finite".into()));
    }
    let mut probs = Array2::zeros(theta.0.dim());
    for (row, mut out) in theta.0.rows().into_iter().zip(probs.rows_mut()) {
        let row = row.to_vec();
        let mut buf = vec![0.0; row.len()];
        softmax_row_into(&row, &mut buf);
        out.assign(&Array1::from(buf));
    }
    Ok(StochasticPolicy::from_probs_unchecked(probs))
}

/// `∂ log π_θ(a|s) / ∂θ(s', a') = 1{s = s'}(1{a = a'} − π_θ(a'|s))`.
pub fn grad_log_softmax(theta: &Logits, s: usize, a: usize) -> Result<Array2<f64>> {
    if s >= theta.n_states() || a >= theta.n_actions() {
        return Err(Error::Index(format!(
            "(s, a) = ({s}, {a}) outside ({}, {})",
            theta.n_states(),
            theta.n_actions()
        )));
    }
    let mut out = Array2::zeros(theta.0.dim());
    let row = theta.0.row(s).to_vec();
    let mut probs = vec![0.0; row.len()];
    softmax_row_into(&row, &mut probs);
    for (b, p) in probs.iter().enumerate() {
        out[[s, b]] = if a == b { 1.0 - p } else { -p };
    }
    Ok(out)
}

/// The contextual bandit solved in one DynPG epoch.
///
/// With the continuation value `V_h` of a fixed stack, the epoch objective is
/// `J(θ) = Σ_s μ(s) Σ_a π_θ(a|s) Q(s, a)` where `Q = r + γ P V_h`.
#[derive(Debug, Clone)]
pub struct BanditObjective {
    q: Array2<f64>,
    weights: Array1<f64>,
    optimal: Vec<Vec<usize>>,
}

/// Relative tolerance under which two Q-values count as tied.
const TIE_TOL: f64 = 1e-12;

impl BanditObjective {
    /// Objective for training a new head in front of `stack`.
    pub fn from_stack(mdp: &TabularMdp, stack: &PolicyStack) -> Result<Self> {
        let v = evaluate_stack(mdp, stack)?;
        let q = q_from_value(mdp, &v)?;
        Ok(Self::from_q(q.into_inner(), mdp.init_dist().clone()))
    }

    /// Objective with an explicit state-action table and state weights.
    pub fn from_q(q: Array2<f64>, weights: Array1<f64>) -> Self {
        let optimal = q
            .rows()
            .into_iter()
            .map(|row| {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let tol = TIE_TOL * max.abs().max(1.0);
                row.iter()
                    .enumerate()
                    .filter(|(_, &x)| x >= max - tol)
                    .map(|(a, _)| a)
                    .collect()
            })
            .collect();
        BanditObjective { q, weights, optimal }
    }

    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    /// Greedy actions per state (more than one on ties).
    pub fn optimal_actions(&self) -> &[Vec<usize>] {
        &self.optimal
    }

    pub(crate) fn check(&self, theta: &Logits) -> Result<()> {
        if theta.values().dim() != self.q.dim() {
            return Err(Error::Shape(format!(
                "logits have shape {:?}, objective {:?}",
                theta.values().dim(),
                self.q.dim()
            )));
        }
        Ok(())
    }

    /// `J(θ)`.
    pub fn value(&self, pi: &StochasticPolicy) -> f64 {
        self.state_values(pi).dot(&self.weights)
    }

    /// `Σ_a π(a|s) Q(s, a)` per state, i.e. `T^π(V_h)`.
    pub fn state_values(&self, pi: &StochasticPolicy) -> Array1<f64> {
        Array1::from_shape_fn(self.q.nrows(), |s| {
            self.q.row(s).dot(&pi.probs().row(s))
        })
    }

    /// `‖T^*(V_h) − T^π(V_h)‖_∞`.
    pub fn one_step_error(&self, pi: &StochasticPolicy) -> f64 {
        let vals = self.state_values(pi);
        self.q
            .rows()
            .into_iter()
            .zip(vals.iter())
            .map(|(row, v)| {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (max - v).max(0.0)
            })
            .fold(0.0, f64::max)
    }

    /// `min_s π(a*(s)|s)`, taking the least likely greedy action on ties.
    pub fn min_optimal_prob(&self, pi: &StochasticPolicy) -> f64 {
        self.optimal
            .iter()
            .enumerate()
            .map(|(s, acts)| {
                acts.iter()
                    .map(|&a| pi.prob(s, a))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// `∇_θ J(θ)` with entries `μ(s) π_θ(a|s) (Q(s, a) − Σ_b π_θ(b|s) Q(s, b))`.
    pub fn gradient(&self, theta: &Logits) -> Result<Array2<f64>> {
        self.check(theta)?;
        let pi = softmax(theta)?;
        let vals = self.state_values(&pi);
        Ok(Array2::from_shape_fn(self.q.dim(), |(s, a)| {
            self.weights[s] * pi.prob(s, a) * (self.q[[s, a]] - vals[s])
        }))
    }
}

/// `∇_θ V_{h+1}^{{π_θ, stack}}(μ)` in closed form via the advantage identity.
pub fn exact_epoch_gradient(
    mdp: &TabularMdp,
    theta: &Logits,
    stack: &PolicyStack,
) -> Result<Array2<f64>> {
    BanditObjective::from_stack(mdp, stack)?.gradient(theta)
}
