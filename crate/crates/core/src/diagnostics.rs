//! Error decomposition of a policy stack and small theory helpers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    bellman_expect, bellman_optimal, evaluate_stationary_inf, stack_values, value_iteration,
    PolicyStack, TabularMdp, Termination, ValueFunction,
};
use crate::softmax::{softmax, BanditObjective, Logits};

/// Tolerance of the value-iteration reference behind the "true" errors.
pub const REFERENCE_TOL: f64 = 1e-9;

/// Additive slack for asserting bounds against the reference.
pub const BOUND_SLACK: f64 = 1e-8;

/// Terms of the error decomposition for a stack of length `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub horizon: usize,
    /// Always zero: tabular softmax represents every greedy policy in the limit.
    pub approx_error: f64,
    /// `γ^H R* / (1−γ)`.
    pub truncation: f64,
    /// `Σ_{h<H} γ^{H−h−1} ‖T^*(V_h) − V_{h+1}‖_∞`.
    pub accumulated_opt: f64,
    /// `‖T^{head}(V_H) − V_H‖_∞ / (1−γ)`.
    pub stationary: f64,
    /// `‖V_∞^* − V_H‖_∞`.
    pub true_value_error: f64,
    /// `‖V_∞^* − V_∞^{head}‖_∞`.
    pub true_overall_error: f64,
}

impl ErrorBreakdown {
    /// Upper bound on the stack's value error.
    pub fn value_error_bound(&self) -> f64 {
        self.approx_error + self.truncation + self.accumulated_opt
    }

    /// Upper bound on the head's overall error.
    pub fn overall_error_bound(&self) -> f64 {
        self.value_error_bound() + self.stationary
    }

    /// Whether both bounds dominate the measured errors up to `slack`.
    pub fn bounds_hold(&self, slack: f64) -> bool {
        self.true_value_error <= self.value_error_bound() + slack
            && self.true_overall_error <= self.overall_error_bound() + slack
    }
}

/// `V_∞^*` to within [`REFERENCE_TOL`].
pub fn reference_value(mdp: &TabularMdp) -> Result<ValueFunction> {
    Ok(value_iteration(mdp, Termination::Tolerance(REFERENCE_TOL))?.0)
}

/// Decomposes the errors of `stack`; the stack must be non-empty.
pub fn decompose(mdp: &TabularMdp, stack: &PolicyStack) -> Result<ErrorBreakdown> {
    decompose_with_reference(mdp, stack, &reference_value(mdp)?)
}

/// Like [`decompose`] with a precomputed `V_∞^*`.
pub fn decompose_with_reference(
    mdp: &TabularMdp,
    stack: &PolicyStack,
    v_star: &ValueFunction,
) -> Result<ErrorBreakdown> {
    let head = stack
        .head()
        .ok_or_else(|| Error::Input("cannot decompose an empty stack".into()))?;
    let horizon = stack.len();
    let gamma = mdp.gamma();
    let values = stack_values(mdp, stack)?;
    let mut accumulated_opt = 0.0;
    for h in 0..horizon {
        let gap = bellman_optimal(mdp, &values[h])?.sup_dist(&values[h + 1]);
        accumulated_opt += gamma.powi((horizon - h - 1) as i32) * gap;
    }
    let v_h = &values[horizon];
    let v_next = bellman_expect(mdp, v_h, head)?;
    let stationary = v_next.sup_dist(v_h) / (1.0 - gamma);
    let v_head = evaluate_stationary_inf(mdp, head)?;
    Ok(ErrorBreakdown {
        horizon,
        approx_error: 0.0,
        truncation: gamma.powi(horizon as i32) * mdp.reward_bound() / (1.0 - gamma),
        accumulated_opt,
        stationary,
        true_value_error: v_star.sup_dist(v_h),
        true_overall_error: v_star.sup_dist(&v_head),
    })
}

/// CSV with one row per breakdown and a header of field names.
pub fn breakdowns_to_csv(rows: &[ErrorBreakdown]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

pub fn breakdowns_from_csv(text: &str) -> Result<Vec<ErrorBreakdown>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| Error::Io(e.to_string()))
}

fn weighted_sum(gamma: f64, eps: &[f64], horizon: usize) -> f64 {
    eps[..horizon]
        .iter()
        .enumerate()
        .map(|(h, e)| gamma.powi((horizon - h - 1) as i32) * e)
        .sum()
}

/// Guard `ε_H ≤ (1−γ) Σ_{h<H} γ^{H−h−1} ε_h` for accuracies `ε_0..ε_H`.
///
/// When it holds, [`compact_overall_bound`] bounds the overall error.
pub fn check_guard(mdp: &TabularMdp, eps: &[f64], horizon: usize) -> Result<bool> {
    if eps.len() != horizon + 1 {
        return Err(Error::Shape(format!(
            "guard needs {} accuracies, got {}",
            horizon + 1,
            eps.len()
        )));
    }
    let gamma = mdp.gamma();
    Ok(eps[horizon] <= (1.0 - gamma) * weighted_sum(gamma, eps, horizon))
}

/// `3/(1−γ) · (γ^H R*/(1−γ) + Σ_{h<H} γ^{H−h−1} ε_h)`.
pub fn compact_overall_bound(mdp: &TabularMdp, eps: &[f64], horizon: usize) -> Result<f64> {
    if eps.len() < horizon {
        return Err(Error::Shape(format!(
            "bound needs {horizon} accuracies, got {}",
            eps.len()
        )));
    }
    let gamma = mdp.gamma();
    let trunc = gamma.powi(horizon as i32) * mdp.reward_bound() / (1.0 - gamma);
    Ok(3.0 / (1.0 - gamma) * (trunc + weighted_sum(gamma, eps, horizon)))
}

/// Minimizer of `Σ a_h / c_h` subject to `Σ b_h c_h = d`.
///
/// Returns `c_h = C (b_h/a_h)^{−1/2}` with `C = d / Σ (a_h b_h)^{1/2}` and the
/// minimum `(Σ (a_h b_h)^{1/2})² / d`.
pub fn lagrange_schedule(a: &[f64], b: &[f64], d: f64) -> Result<(Vec<f64>, f64)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Input(format!(
            "sequences must be non-empty and of equal length, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|&x| !(x > 0.0 && x.is_finite())) || !(d > 0.0 && d.is_finite()) {
        return Err(Error::Input("all inputs must be strictly positive".into()));
    }
    let root_sum: f64 = a.iter().zip(b).map(|(x, y)| (x * y).sqrt()).sum();
    let scale = d / root_sum;
    let c = a.iter().zip(b).map(|(x, y)| scale * (x / y).sqrt()).collect();
    Ok((c, root_sum * root_sum / d))
}

/// One row of the `−ln γ` versus `1−γ` comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub gamma: f64,
    pub neg_log_gamma: f64,
    pub one_minus_gamma: f64,
    pub ratio: f64,
}

pub fn gamma_equivalence_table(gammas: &[f64]) -> Result<Vec<GammaRow>> {
    gammas
        .iter()
        .map(|&gamma| {
            if !(gamma > 0.0 && gamma < 1.0) {
                return Err(Error::Input(format!("gamma must lie in (0, 1), got {gamma}")));
            }
            let neg_log_gamma = -gamma.ln();
            let one_minus_gamma = 1.0 - gamma;
            Ok(GammaRow {
                gamma,
                neg_log_gamma,
                one_minus_gamma,
                ratio: neg_log_gamma / one_minus_gamma,
            })
        })
        .collect()
}

/// Both sides of the gradient-domination inequality for an epoch objective:
/// `(‖∇J(θ)‖₂, min_s π_θ(a*(s)|s) · (J^* − J(θ)))`.
///
/// The inequality `lhs ≥ rhs / √|S|` always holds; without the `√|S|`
/// factor it can fail once several states carry weight.
pub fn gradient_domination(objective: &BanditObjective, theta: &Logits) -> Result<(f64, f64)> {
    let grad = objective.gradient(theta)?;
    let pi = softmax(theta)?;
    let best: f64 = objective
        .q()
        .rows()
        .into_iter()
        .zip(objective.weights())
        .map(|(row, w)| w * row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    let gap = (best - objective.value(&pi)).max(0.0);
    let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok((norm, objective.min_optimal_prob(&pi) * gap))
}
